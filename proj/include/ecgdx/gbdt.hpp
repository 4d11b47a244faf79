#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ecgdx/tabular.hpp"

namespace ecgdx {

struct TrainError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct TrainParams {
    int max_depth = 6;
    int n_rounds_max = 500;
    double learning_rate = 0.1;
    double l2_reg = 1.0;          // lambda
    double min_split_gain = 0.0;  // gamma
    double min_child_weight = 1.0;
    int patience = 10;
    std::uint64_t seed = 0;
};

// Flat binary regression tree, nodes in preorder, root at index 0.
// feature < 0 marks a leaf. Routing: missing -> default side, else
// x[feature] < threshold goes left.
struct TreeNode {
    int feature = -1;
    double threshold = 0.0;
    bool default_left = true;
    int left = -1;
    int right = -1;
    double value = 0.0;  // leaf value, margin units, learning rate folded in
    double cover = 0.0;  // sum of hessians reaching the node
};

struct Tree {
    std::vector<TreeNode> nodes;

    bool leaf_only() const { return nodes.size() == 1; }
    int max_depth() const;
};

struct TreeEnsemble {
    double base_score = 0.0;  // margin units
    std::vector<Tree> trees;
    int n_features = 0;
    std::uint64_t schema_fingerprint = 0;
    TrainParams params;

    std::size_t n_nodes() const;
};

struct GradHess {
    double g = 0.0;
    double h = 0.0;
};

inline double sigmoid(double m) {
    if (m >= 0.0) {
        const double z = std::exp(-m);
        return 1.0 / (1.0 + z);
    }
    const double z = std::exp(m);
    return z / (1.0 + z);
}

// -[y log p + (1-y) log(1-p)] with p = sigmoid(margin), overflow-safe.
double logistic_loss(double margin, int label);

// g = p - y, h = p(1-p) clamped below at 1e-16.
GradHess logistic_grad_hess(double margin, int label);

struct SplitCandidate {
    int feature = -1;
    double threshold = 0.0;
    bool default_left = true;
    double gain = -std::numeric_limits<double>::infinity();

    bool valid() const { return feature >= 0 && gain > 0.0; }
};

// Per-feature present-value rows, sorted ascending by value (ties by row),
// built once per matrix and shared across rounds and targets.
struct ColumnIndex {
    std::vector<std::vector<std::uint32_t>> sorted_rows;

    static ColumnIndex build(const FeatureMatrix& X);
};

// Exact greedy split over every (feature, midpoint threshold, default
// direction) triple for the rows listed in `rows`. Ties break to the lowest
// feature index, then lowest threshold, then default_left. Returns an
// invalid candidate when no split has gain > 0 or the children would violate
// min_child_weight.
SplitCandidate find_best_split(const FeatureMatrix& X, std::span<const GradHess> gh,
                               std::span<const std::uint32_t> rows, const TrainParams& params);

// Grows one tree over all rows of X. Leaf value = -lr * G / (H + lambda);
// cover = sum of hessians reaching the node.
Tree grow_tree(const FeatureMatrix& X, const ColumnIndex& cols, std::span<const GradHess> gh,
               const TrainParams& params);

double tree_leaf_value(const Tree& t, std::span<const double> x);
double predict_margin(const TreeEnsemble& e, std::span<const double> x);
double predict_proba(const TreeEnsemble& e, std::span<const double> x);

// Margins for every row of a matrix (column layout shared with training).
std::vector<double> predict_margins(const TreeEnsemble& e, const FeatureMatrix& X);

struct RoundRecord {
    int round = 0;
    double train_loss = 0.0;
    double val_auroc = 0.0;
};

struct TrainResult {
    TreeEnsemble ensemble;  // truncated to the best validation round
    std::vector<RoundRecord> history;
    int best_round = -1;
    double best_val_auroc = 0.0;
};

// Boosts with logistic loss, monitoring validation AUROC on margins; stops
// after `patience` rounds without improvement and keeps the best round.
// Throws TrainError (naming the target) when the validation fold is
// single-class.
TrainResult train(const FeatureMatrix& X_train, std::span<const int> y_train,
                  const FeatureMatrix& X_val, std::span<const int> y_val, const TargetCode& target,
                  const TrainParams& params, std::uint64_t schema_fingerprint);

// Versioned JSON model document; numbers round-trip bit-exactly.
std::string ensemble_to_json(const TreeEnsemble& e, const TargetCode& target);
struct ModelFile {
    TreeEnsemble ensemble;
    TargetCode target;
};
ModelFile ensemble_from_json(const std::string& text);
void save_model(const std::filesystem::path& path, const TreeEnsemble& e, const TargetCode& target);
ModelFile load_model(const std::filesystem::path& path);

}  // namespace ecgdx
