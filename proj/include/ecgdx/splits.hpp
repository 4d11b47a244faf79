#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <vector>

#include "ecgdx/tabular.hpp"

namespace ecgdx {

struct SplitError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// 18:1:1 protocol by default: folds 0..17 train, 18 validation, 19 test.
struct FoldPlan {
    int n_folds = 20;
    int val_fold = 18;
    int test_fold = 19;
    std::uint64_t seed = 0;

    bool is_train_fold(int f) const { return f != val_fold && f != test_fold; }
};

// Stratification key: per-target label bits, age quartile (0..3 against the
// cohort's empirical quartiles), sex. Strata smaller than n_folds collapse
// into a fallback keyed by (any positive label, sex).
struct StratumKey {
    bool fallback = false;
    std::uint32_t label_bits = 0;  // fallback: any-positive flag
    int age_quartile = 0;          // fallback: -1
    int sex = 0;

    auto operator<=>(const StratumKey&) const = default;
    std::uint64_t hash() const;
};

// Empirical age quartile boundaries (Q1, Q2, Q3), linear interpolation.
std::array<double, 3> age_quartiles(const LabeledCohort& c);

StratumKey stratum_key(const LabeledCohort& c, std::size_t sample,
                       const std::array<double, 3>& quartiles);

// Deterministic stratified assignment: within each stratum, samples are
// shuffled by a generator seeded from (plan.seed, stratum key) and dealt
// round-robin from a random start fold. Throws on empty cohorts.
std::vector<int> assign_folds(const LabeledCohort& c, const FoldPlan& plan);

// Number of strata actually dealt (after fallback merging); bounds the
// spread of fold sizes.
std::size_t dealt_stratum_count(const LabeledCohort& c, const FoldPlan& plan);

void write_folds_csv(std::ostream& out, const LabeledCohort& c, std::span<const int> fold_of);
void write_folds_csv(const std::filesystem::path& path, const LabeledCohort& c,
                     std::span<const int> fold_of);

// Reads a fold file back, matching rows by record_id. Throws on unknown or
// missing ids.
std::vector<int> read_folds_csv(const std::filesystem::path& path, const LabeledCohort& c);

// Row indices per role under a plan.
struct FoldSplit {
    std::vector<std::size_t> train;
    std::vector<std::size_t> val;
    std::vector<std::size_t> test;
};
FoldSplit split_by_role(std::span<const int> fold_of, const FoldPlan& plan);

}  // namespace ecgdx
