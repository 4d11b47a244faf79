#include "ecgdx/gbdt.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <nlohmann/json.hpp>

#include "ecgdx/hash.hpp"
#include "ecgdx/metrics.hpp"

namespace ecgdx {

int Tree::max_depth() const {
    // nodes are in preorder; walk explicitly to avoid recursion
    std::vector<std::pair<int, int>> stack{{0, 0}};
    int depth = 0;
    while (!stack.empty()) {
        const auto [id, d] = stack.back();
        stack.pop_back();
        depth = std::max(depth, d);
        const auto& n = nodes[static_cast<std::size_t>(id)];
        if (n.feature >= 0) {
            stack.push_back({n.left, d + 1});
            stack.push_back({n.right, d + 1});
        }
    }
    return depth;
}

std::size_t TreeEnsemble::n_nodes() const {
    std::size_t total = 0;
    for (const auto& t : trees) total += t.nodes.size();
    return total;
}

double logistic_loss(double margin, int label) {
    const double a = std::max(margin, 0.0);
    return a - static_cast<double>(label) * margin +
           std::log(std::exp(-a) + std::exp(margin - a));
}

GradHess logistic_grad_hess(double margin, int label) {
    const double p = sigmoid(margin);
    return {p - static_cast<double>(label), std::max(p * (1.0 - p), 1e-16)};
}

ColumnIndex ColumnIndex::build(const FeatureMatrix& X) {
    ColumnIndex idx;
    idx.sorted_rows.resize(static_cast<std::size_t>(X.cols));
    for (int f = 0; f < X.cols; ++f) {
        auto& rows = idx.sorted_rows[static_cast<std::size_t>(f)];
        const auto col = X.column(f);
        rows.reserve(X.rows);
        for (std::uint32_t r = 0; r < X.rows; ++r)
            if (!std::isnan(col[r])) rows.push_back(r);
        std::sort(rows.begin(), rows.end(), [&](std::uint32_t a, std::uint32_t b) {
            if (col[a] != col[b]) return col[a] < col[b];
            return a < b;
        });
    }
    return idx;
}

namespace {

struct NodeTotals {
    double g = 0.0;
    double h = 0.0;
    std::uint32_t count = 0;
};

struct ScanState {
    double g_prefix = 0.0;
    double h_prefix = 0.0;
    std::uint32_t count = 0;
    double prev_value = 0.0;
};

// Evaluates the boundary between st.prev_value and hi for one node, trying
// both default directions; keeps the strictly best gain, so iteration order
// (feature asc, threshold asc, default_left first) realizes the tie-break.
inline void evaluate_boundary(SplitCandidate& best, const NodeTotals& tot, double present_g,
                              double present_h, const ScanState& st, int feature, double hi,
                              const TrainParams& p) {
    const double lo = st.prev_value;
    const double t = lo + 0.5 * (hi - lo);
    if (!(lo < t && t <= hi)) return;  // adjacent doubles cannot separate
    const double g_miss = tot.g - present_g;
    const double h_miss = tot.h - present_h;
    const double gl = st.g_prefix;
    const double hl = st.h_prefix;
    const double gr = present_g - gl;
    const double hr = present_h - hl;
    const double parent_term = tot.g * tot.g / (tot.h + p.l2_reg);
    for (int d = 0; d < 2; ++d) {
        const bool default_left = (d == 0);
        const double G_L = default_left ? gl + g_miss : gl;
        const double H_L = default_left ? hl + h_miss : hl;
        const double G_R = default_left ? gr : gr + g_miss;
        const double H_R = default_left ? hr : hr + h_miss;
        if (H_L < p.min_child_weight || H_R < p.min_child_weight) continue;
        const double gain = 0.5 * (G_L * G_L / (H_L + p.l2_reg) + G_R * G_R / (H_R + p.l2_reg) -
                                   parent_term) -
                            p.min_split_gain;
        if (gain > best.gain) {
            best.feature = feature;
            best.threshold = t;
            best.default_left = default_left;
            best.gain = gain;
        }
    }
}

// One pass per feature over the sorted column serves every open node at the
// current level simultaneously.
std::vector<SplitCandidate> best_splits_for_slots(const FeatureMatrix& X, const ColumnIndex& cols,
                                                  std::span<const GradHess> gh,
                                                  std::span<const std::int32_t> row_slot,
                                                  std::span<const NodeTotals> totals,
                                                  const TrainParams& p) {
    const std::size_t k = totals.size();
    std::vector<SplitCandidate> best(k);
    std::vector<double> present_g(k);
    std::vector<double> present_h(k);
    std::vector<ScanState> scan(k);

    for (int f = 0; f < X.cols; ++f) {
        const auto& order = cols.sorted_rows[static_cast<std::size_t>(f)];
        std::fill(present_g.begin(), present_g.end(), 0.0);
        std::fill(present_h.begin(), present_h.end(), 0.0);
        for (const std::uint32_t r : order) {
            const std::int32_t s = row_slot[r];
            if (s >= 0) {
                present_g[static_cast<std::size_t>(s)] += gh[r].g;
                present_h[static_cast<std::size_t>(s)] += gh[r].h;
            }
        }
        std::fill(scan.begin(), scan.end(), ScanState{});
        const auto col = X.column(f);
        for (const std::uint32_t r : order) {
            const std::int32_t si = row_slot[r];
            if (si < 0) continue;
            const auto s = static_cast<std::size_t>(si);
            const double v = col[r];
            auto& st = scan[s];
            if (st.count > 0 && v != st.prev_value)
                evaluate_boundary(best[s], totals[s], present_g[s], present_h[s], st, f, v, p);
            st.g_prefix += gh[r].g;
            st.h_prefix += gh[r].h;
            ++st.count;
            st.prev_value = v;
        }
    }
    return best;
}

struct BuildNode {
    NodeTotals tot;
    int depth = 0;
    int feature = -1;
    double threshold = 0.0;
    bool default_left = true;
    int left = -1;
    int right = -1;
};

int emit_preorder(const std::vector<BuildNode>& src, int id, double learning_rate, double l2_reg,
                  std::vector<TreeNode>& out) {
    const int my = static_cast<int>(out.size());
    out.emplace_back();
    const auto& nd = src[static_cast<std::size_t>(id)];
    TreeNode node;
    node.cover = nd.tot.h;
    if (nd.feature >= 0) {
        node.feature = nd.feature;
        node.threshold = nd.threshold;
        node.default_left = nd.default_left;
        node.left = emit_preorder(src, nd.left, learning_rate, l2_reg, out);
        node.right = emit_preorder(src, nd.right, learning_rate, l2_reg, out);
    } else {
        node.value = -learning_rate * nd.tot.g / (nd.tot.h + l2_reg);
    }
    out[static_cast<std::size_t>(my)] = node;
    return my;
}

}  // namespace

SplitCandidate find_best_split(const FeatureMatrix& X, std::span<const GradHess> gh,
                               std::span<const std::uint32_t> rows, const TrainParams& params) {
    if (rows.empty()) return {};
    std::vector<std::int32_t> row_slot(X.rows, -1);
    NodeTotals tot;
    for (const std::uint32_t r : rows) {
        row_slot[r] = 0;
        tot.g += gh[r].g;
        tot.h += gh[r].h;
        ++tot.count;
    }
    const ColumnIndex cols = ColumnIndex::build(X);
    auto best = best_splits_for_slots(X, cols, gh, row_slot, {&tot, 1}, params);
    return best[0];
}

Tree grow_tree(const FeatureMatrix& X, const ColumnIndex& cols, std::span<const GradHess> gh,
               const TrainParams& params) {
    const std::size_t n = X.rows;
    if (n == 0) throw TrainError("grow_tree: empty matrix");
    if (gh.size() != n) throw TrainError("grow_tree: gradient size mismatch");

    std::vector<BuildNode> nodes(1);
    for (const auto& p : gh) {
        nodes[0].tot.g += p.g;
        nodes[0].tot.h += p.h;
    }
    nodes[0].tot.count = static_cast<std::uint32_t>(n);

    std::vector<std::int32_t> row_node(n, 0);
    std::vector<int> open{0};

    while (!open.empty() && nodes[static_cast<std::size_t>(open[0])].depth < params.max_depth) {
        std::vector<std::int32_t> slot_of_node(nodes.size(), -1);
        std::vector<NodeTotals> totals(open.size());
        for (std::size_t s = 0; s < open.size(); ++s) {
            slot_of_node[static_cast<std::size_t>(open[s])] = static_cast<std::int32_t>(s);
            totals[s] = nodes[static_cast<std::size_t>(open[s])].tot;
        }
        std::vector<std::int32_t> row_slot(n);
        for (std::size_t i = 0; i < n; ++i)
            row_slot[i] = slot_of_node[static_cast<std::size_t>(row_node[i])];

        const auto best = best_splits_for_slots(X, cols, gh, row_slot, totals, params);

        std::vector<int> next_open;
        for (std::size_t s = 0; s < open.size(); ++s) {
            if (!best[s].valid()) continue;
            const int id = open[s];
            const int li = static_cast<int>(nodes.size());
            nodes.emplace_back();
            const int ri = static_cast<int>(nodes.size());
            nodes.emplace_back();
            const int child_depth = nodes[static_cast<std::size_t>(id)].depth + 1;
            nodes[static_cast<std::size_t>(li)].depth = child_depth;
            nodes[static_cast<std::size_t>(ri)].depth = child_depth;
            auto& nd = nodes[static_cast<std::size_t>(id)];
            nd.feature = best[s].feature;
            nd.threshold = best[s].threshold;
            nd.default_left = best[s].default_left;
            nd.left = li;
            nd.right = ri;
            next_open.push_back(li);
            next_open.push_back(ri);
        }
        if (next_open.empty()) break;

        for (std::size_t i = 0; i < n; ++i) {
            auto& nd = nodes[static_cast<std::size_t>(row_node[i])];
            if (nd.feature < 0) continue;  // node stayed a leaf this level
            const double v = X.at(i, nd.feature);
            const bool go_left = std::isnan(v) ? nd.default_left : (v < nd.threshold);
            const int child = go_left ? nd.left : nd.right;
            auto& cn = nodes[static_cast<std::size_t>(child)];
            cn.tot.g += gh[i].g;
            cn.tot.h += gh[i].h;
            ++cn.tot.count;
            row_node[i] = child;
        }
        open = std::move(next_open);
    }

    Tree t;
    t.nodes.reserve(nodes.size());
    emit_preorder(nodes, 0, params.learning_rate, params.l2_reg, t.nodes);
    return t;
}

double tree_leaf_value(const Tree& t, std::span<const double> x) {
    const TreeNode* n = t.nodes.data();
    while (n->feature >= 0) {
        const double v = x[static_cast<std::size_t>(n->feature)];
        const int next =
            std::isnan(v) ? (n->default_left ? n->left : n->right)
                          : (v < n->threshold ? n->left : n->right);
        n = t.nodes.data() + next;
    }
    return n->value;
}

double predict_margin(const TreeEnsemble& e, std::span<const double> x) {
    if (static_cast<int>(x.size()) != e.n_features)
        throw TrainError("predict: feature count mismatch");
    double m = e.base_score;
    for (const auto& t : e.trees) m += tree_leaf_value(t, x);
    return m;
}

double predict_proba(const TreeEnsemble& e, std::span<const double> x) {
    return sigmoid(predict_margin(e, x));
}

std::vector<double> predict_margins(const TreeEnsemble& e, const FeatureMatrix& X) {
    if (X.cols != e.n_features) throw TrainError("predict: feature count mismatch");
    std::vector<double> margins(X.rows, e.base_score);
    std::vector<double> row(static_cast<std::size_t>(X.cols));
    for (std::size_t r = 0; r < X.rows; ++r) {
        X.get_row(r, row);
        for (const auto& t : e.trees) margins[r] += tree_leaf_value(t, row);
    }
    return margins;
}

TrainResult train(const FeatureMatrix& X_train, std::span<const int> y_train,
                  const FeatureMatrix& X_val, std::span<const int> y_val, const TargetCode& target,
                  const TrainParams& params, std::uint64_t schema_fingerprint) {
    if (X_train.rows == 0 || X_val.rows == 0)
        throw TrainError("train: empty train or validation set (target " + target.code + ")");
    if (y_train.size() != X_train.rows || y_val.size() != X_val.rows)
        throw TrainError("train: label size mismatch");
    if (params.patience < 1) throw TrainError("train: patience must be >= 1");

    std::size_t val_pos = 0;
    for (int y : y_val) val_pos += static_cast<std::size_t>(y != 0);
    if (val_pos == 0 || val_pos == y_val.size())
        throw TrainError("train: validation fold is single-class for target " + target.code);

    double train_pos = 0.0;
    for (int y : y_train) train_pos += static_cast<double>(y != 0);
    double p_bar = train_pos / static_cast<double>(y_train.size());
    p_bar = std::clamp(p_bar, 1e-6, 1.0 - 1e-6);

    TrainResult result;
    auto& ensemble = result.ensemble;
    ensemble.base_score = std::log(p_bar / (1.0 - p_bar));
    ensemble.n_features = X_train.cols;
    ensemble.schema_fingerprint = schema_fingerprint;
    ensemble.params = params;

    const ColumnIndex cols = ColumnIndex::build(X_train);
    std::vector<double> margins_train(X_train.rows, ensemble.base_score);
    std::vector<double> margins_val(X_val.rows, ensemble.base_score);
    std::vector<GradHess> gh(X_train.rows);
    std::vector<double> row(static_cast<std::size_t>(X_train.cols));

    double best_auroc = -std::numeric_limits<double>::infinity();
    int rounds_since_best = 0;

    for (int round = 0; round < params.n_rounds_max; ++round) {
        for (std::size_t i = 0; i < X_train.rows; ++i)
            gh[i] = logistic_grad_hess(margins_train[i], y_train[i]);

        Tree tree = grow_tree(X_train, cols, gh, params);

        double loss_sum = 0.0;
        for (std::size_t i = 0; i < X_train.rows; ++i) {
            X_train.get_row(i, row);
            margins_train[i] += tree_leaf_value(tree, row);
            loss_sum += logistic_loss(margins_train[i], y_train[i]);
        }
        for (std::size_t i = 0; i < X_val.rows; ++i) {
            X_val.get_row(i, row);
            margins_val[i] += tree_leaf_value(tree, row);
        }
        const double val_auroc = auroc(margins_val, y_val);
        result.history.push_back(
            {round, loss_sum / static_cast<double>(X_train.rows), val_auroc});
        ensemble.trees.push_back(std::move(tree));

        if (val_auroc > best_auroc) {
            best_auroc = val_auroc;
            result.best_round = round;
            rounds_since_best = 0;
        } else if (++rounds_since_best >= params.patience) {
            break;
        }
    }

    ensemble.trees.resize(static_cast<std::size_t>(result.best_round + 1));
    result.best_val_auroc = best_auroc;
    return result;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

namespace {

using nlohmann::json;

json params_to_json(const TrainParams& p) {
    return json{{"max_depth", p.max_depth},
                {"n_rounds_max", p.n_rounds_max},
                {"learning_rate", p.learning_rate},
                {"l2_reg", p.l2_reg},
                {"min_split_gain", p.min_split_gain},
                {"min_child_weight", p.min_child_weight},
                {"patience", p.patience},
                {"seed", p.seed}};
}

TrainParams params_from_json(const json& j) {
    TrainParams p;
    p.max_depth = j.at("max_depth").get<int>();
    p.n_rounds_max = j.at("n_rounds_max").get<int>();
    p.learning_rate = j.at("learning_rate").get<double>();
    p.l2_reg = j.at("l2_reg").get<double>();
    p.min_split_gain = j.at("min_split_gain").get<double>();
    p.min_child_weight = j.at("min_child_weight").get<double>();
    p.patience = j.at("patience").get<int>();
    p.seed = j.at("seed").get<std::uint64_t>();
    return p;
}

}  // namespace

std::string ensemble_to_json(const TreeEnsemble& e, const TargetCode& target) {
    json j;
    j["format"] = "ecgdx-model";
    j["format_version"] = 1;
    j["target"] = {{"code", target.code}, {"description", target.description}};
    j["base_score"] = e.base_score;
    j["n_features"] = e.n_features;
    j["schema_fingerprint"] = to_hex16(e.schema_fingerprint);
    j["params"] = params_to_json(e.params);
    json trees = json::array();
    for (const auto& t : e.trees) {
        json nodes = json::array();
        for (const auto& n : t.nodes) {
            if (n.feature >= 0)
                nodes.push_back(json{{"feature", n.feature},
                                     {"threshold", n.threshold},
                                     {"default_left", n.default_left},
                                     {"left", n.left},
                                     {"right", n.right},
                                     {"cover", n.cover}});
            else
                nodes.push_back(json{{"value", n.value}, {"cover", n.cover}});
        }
        trees.push_back(json{{"nodes", std::move(nodes)}});
    }
    j["trees"] = std::move(trees);
    return j.dump(1) + "\n";
}

ModelFile ensemble_from_json(const std::string& text) {
    const json j = json::parse(text);
    if (j.at("format").get<std::string>() != "ecgdx-model")
        throw TrainError("not a model document");
    if (j.at("format_version").get<int>() != 1)
        throw TrainError("unsupported model format version");

    ModelFile m;
    m.target.code = j.at("target").at("code").get<std::string>();
    m.target.description = j.at("target").at("description").get<std::string>();
    auto& e = m.ensemble;
    e.base_score = j.at("base_score").get<double>();
    e.n_features = j.at("n_features").get<int>();
    e.schema_fingerprint = std::stoull(j.at("schema_fingerprint").get<std::string>(), nullptr, 16);
    e.params = params_from_json(j.at("params"));
    for (const auto& jt : j.at("trees")) {
        Tree t;
        for (const auto& jn : jt.at("nodes")) {
            TreeNode n;
            n.cover = jn.at("cover").get<double>();
            if (jn.contains("feature")) {
                n.feature = jn.at("feature").get<int>();
                n.threshold = jn.at("threshold").get<double>();
                n.default_left = jn.at("default_left").get<bool>();
                n.left = jn.at("left").get<int>();
                n.right = jn.at("right").get<int>();
            } else {
                n.value = jn.at("value").get<double>();
            }
            t.nodes.push_back(n);
        }
        if (t.nodes.empty()) throw TrainError("model document contains an empty tree");
        e.trees.push_back(std::move(t));
    }
    return m;
}

void save_model(const std::filesystem::path& path, const TreeEnsemble& e,
                const TargetCode& target) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw TrainError("cannot write model file: " + path.string());
    out << ensemble_to_json(e, target);
}

ModelFile load_model(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw TrainError("cannot open model file: " + path.string());
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return ensemble_from_json(text);
}

}  // namespace ecgdx
