#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ecgdx/tabular.hpp"

namespace ecgdx {

struct SingleClassError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Mann-Whitney AUROC with the half-tie convention:
// (#concordant pairs + 0.5 * #tied pairs) / (n_pos * n_neg),
// computed via one sort-and-rank pass. Throws SingleClassError unless both
// classes are present.
double auroc(std::span<const double> scores, std::span<const int> labels);

struct RocPoint {
    double fpr = 0.0;
    double tpr = 0.0;
};

// Staircase from (0,0) to (1,1), one point per distinct threshold; the
// trapezoidal area under it equals auroc().
std::vector<RocPoint> roc_curve(std::span<const double> scores, std::span<const int> labels);

double trapezoid_area(std::span<const RocPoint> points);

struct BootstrapInterval {
    double lo = 0.0;
    double hi = 0.0;
    int n_skipped = 0;  // resamples degenerate after bounded retries
};

// Percentile interval over n_iter resamples with replacement. Single-class
// resamples are redrawn up to 100 times, then skipped (counted). Each
// iteration derives its own generator stream from (seed, iteration), so the
// result does not depend on evaluation order.
BootstrapInterval bootstrap_auroc_interval(std::span<const double> scores,
                                           std::span<const int> labels, int n_iter = 1000,
                                           double level = 0.95, std::uint64_t seed = 0);

// Linear-interpolated empirical quantile of a sorted vector.
double quantile_sorted(std::span<const double> sorted, double p);

struct EvalReport {
    TargetCode target;
    std::string dataset_tag;  // "internal" | "external"
    double auroc = 0.0;
    BootstrapInterval interval_95;
    std::size_t n_pos = 0;
    std::size_t n_neg = 0;
    double prevalence = 0.0;
    std::vector<RocPoint> roc_points;
    int bootstrap_iterations = 0;
};

EvalReport evaluate(std::span<const double> scores, std::span<const int> labels,
                    const TargetCode& target, std::string dataset_tag, int bootstrap_iters = 1000,
                    double level = 0.95, std::uint64_t seed = 0);

std::string eval_report_json(const EvalReport& r);
void write_eval_report(const std::filesystem::path& path, const EvalReport& r);
void write_roc_csv(std::ostream& out, std::span<const RocPoint> points);
void write_roc_csv(const std::filesystem::path& path, std::span<const RocPoint> points);

}  // namespace ecgdx
