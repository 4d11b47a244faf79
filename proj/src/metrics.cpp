#include "ecgdx/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <ostream>

#include <nlohmann/json.hpp>

#include "ecgdx/rng.hpp"
#include "ecgdx/textio.hpp"

namespace ecgdx {

namespace {

void check_two_classes(std::span<const double> scores, std::span<const int> labels,
                       std::size_t& n_pos, std::size_t& n_neg) {
    if (scores.size() != labels.size())
        throw std::invalid_argument("auroc: scores/labels size mismatch");
    if (scores.empty()) throw SingleClassError("auroc: empty input");
    n_pos = 0;
    for (int y : labels) n_pos += static_cast<std::size_t>(y != 0);
    n_neg = scores.size() - n_pos;
    if (n_pos == 0) throw SingleClassError("auroc: no positive samples");
    if (n_neg == 0) throw SingleClassError("auroc: no negative samples");
}

}  // namespace

double auroc(std::span<const double> scores, std::span<const int> labels) {
    std::size_t n_pos = 0, n_neg = 0;
    check_two_classes(scores, labels, n_pos, n_neg);
    const std::size_t n = scores.size();

    std::vector<std::uint32_t> order(n);
    std::iota(order.begin(), order.end(), 0u);
    std::sort(order.begin(), order.end(),
              [&](std::uint32_t a, std::uint32_t b) { return scores[a] < scores[b]; });

    // Average ranks within tie groups; rank sums of half-integers stay exact
    // in doubles far beyond any cohort size used here.
    double pos_rank_sum = 0.0;
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        std::size_t pos_in_group = 0;
        while (j < n && scores[order[j]] == scores[order[i]]) {
            pos_in_group += static_cast<std::size_t>(labels[order[j]] != 0);
            ++j;
        }
        const double avg_rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j));
        pos_rank_sum += avg_rank * static_cast<double>(pos_in_group);
        i = j;
    }
    const double np = static_cast<double>(n_pos);
    const double u = pos_rank_sum - np * (np + 1.0) / 2.0;
    return u / (np * static_cast<double>(n_neg));
}

std::vector<RocPoint> roc_curve(std::span<const double> scores, std::span<const int> labels) {
    std::size_t n_pos = 0, n_neg = 0;
    check_two_classes(scores, labels, n_pos, n_neg);
    const std::size_t n = scores.size();

    std::vector<std::uint32_t> order(n);
    std::iota(order.begin(), order.end(), 0u);
    std::sort(order.begin(), order.end(),
              [&](std::uint32_t a, std::uint32_t b) { return scores[a] > scores[b]; });

    std::vector<RocPoint> points;
    points.push_back({0.0, 0.0});
    std::size_t tp = 0, fp = 0;
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j < n && scores[order[j]] == scores[order[i]]) {
            if (labels[order[j]] != 0) ++tp;
            else ++fp;
            ++j;
        }
        points.push_back({static_cast<double>(fp) / static_cast<double>(n_neg),
                          static_cast<double>(tp) / static_cast<double>(n_pos)});
        i = j;
    }
    return points;
}

double trapezoid_area(std::span<const RocPoint> points) {
    double area = 0.0;
    for (std::size_t i = 1; i < points.size(); ++i)
        area += (points[i].fpr - points[i - 1].fpr) * 0.5 * (points[i].tpr + points[i - 1].tpr);
    return area;
}

double quantile_sorted(std::span<const double> sorted, double p) {
    if (sorted.empty()) throw std::invalid_argument("quantile of empty vector");
    if (sorted.size() == 1) return sorted[0];
    const double pos = p * static_cast<double>(sorted.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(pos);
    if (lo + 1 >= sorted.size()) return sorted.back();
    const double frac = pos - static_cast<double>(lo);
    return sorted[lo] + (sorted[lo + 1] - sorted[lo]) * frac;
}

BootstrapInterval bootstrap_auroc_interval(std::span<const double> scores,
                                           std::span<const int> labels, int n_iter, double level,
                                           std::uint64_t seed) {
    std::size_t n_pos = 0, n_neg = 0;
    check_two_classes(scores, labels, n_pos, n_neg);
    const std::size_t n = scores.size();
    constexpr int kMaxRetries = 100;

    std::vector<double> stats;
    stats.reserve(static_cast<std::size_t>(n_iter));
    std::vector<double> s(n);
    std::vector<int> l(n);
    int skipped = 0;

    for (int iter = 0; iter < n_iter; ++iter) {
        Rng rng(mix_seed(mix_seed(seed, "bootstrap"), static_cast<std::uint64_t>(iter)));
        bool ok = false;
        for (int attempt = 0; attempt < kMaxRetries && !ok; ++attempt) {
            std::size_t pos = 0;
            for (std::size_t i = 0; i < n; ++i) {
                const std::size_t k = static_cast<std::size_t>(rng.bounded(n));
                s[i] = scores[k];
                l[i] = labels[k];
                pos += static_cast<std::size_t>(l[i] != 0);
            }
            ok = (pos > 0 && pos < n);
        }
        if (!ok) {
            ++skipped;
            continue;
        }
        stats.push_back(auroc(s, l));
    }
    if (stats.empty())
        throw SingleClassError("bootstrap_auroc_interval: every resample was single-class");

    std::sort(stats.begin(), stats.end());
    const double alpha = (1.0 - level) / 2.0;
    return {quantile_sorted(stats, alpha), quantile_sorted(stats, 1.0 - alpha), skipped};
}

EvalReport evaluate(std::span<const double> scores, std::span<const int> labels,
                    const TargetCode& target, std::string dataset_tag, int bootstrap_iters,
                    double level, std::uint64_t seed) {
    EvalReport r;
    r.target = target;
    r.dataset_tag = std::move(dataset_tag);
    std::size_t n_pos = 0, n_neg = 0;
    try {
        check_two_classes(scores, labels, n_pos, n_neg);
    } catch (const SingleClassError& e) {
        throw SingleClassError(std::string(e.what()) + " (target " + target.code + ")");
    }
    r.n_pos = n_pos;
    r.n_neg = n_neg;
    r.prevalence = static_cast<double>(n_pos) / static_cast<double>(n_pos + n_neg);
    r.auroc = auroc(scores, labels);
    r.roc_points = roc_curve(scores, labels);
    r.interval_95 = bootstrap_auroc_interval(scores, labels, bootstrap_iters, level, seed);
    r.bootstrap_iterations = bootstrap_iters;
    return r;
}

std::string eval_report_json(const EvalReport& r) {
    nlohmann::json j;
    j["target"] = r.target.code;
    j["target_description"] = r.target.description;
    j["dataset_tag"] = r.dataset_tag;
    j["auroc"] = r.auroc;
    j["interval_95"] = {{"lo", r.interval_95.lo}, {"hi", r.interval_95.hi}};
    j["bootstrap"] = {{"iterations", r.bootstrap_iterations},
                      {"skipped_resamples", r.interval_95.n_skipped}};
    j["n_pos"] = r.n_pos;
    j["n_neg"] = r.n_neg;
    j["prevalence"] = r.prevalence;
    nlohmann::json roc = nlohmann::json::array();
    for (const auto& p : r.roc_points) roc.push_back({p.fpr, p.tpr});
    j["roc_points"] = std::move(roc);
    return j.dump(1) + "\n";
}

void write_eval_report(const std::filesystem::path& path, const EvalReport& r) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write eval report: " + path.string());
    out << eval_report_json(r);
}

void write_roc_csv(std::ostream& out, std::span<const RocPoint> points) {
    out << "fpr,tpr\n";
    for (const auto& p : points) out << format_double(p.fpr) << ',' << format_double(p.tpr) << '\n';
}

void write_roc_csv(const std::filesystem::path& path, std::span<const RocPoint> points) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write roc file: " + path.string());
    write_roc_csv(out, points);
}

}  // namespace ecgdx
