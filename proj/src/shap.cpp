#include "ecgdx/shap.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <mutex>
#include <numeric>
#include <ostream>
#include <thread>

#include "ecgdx/textio.hpp"

namespace ecgdx {

namespace {

inline int hot_child(const TreeNode& n, std::span<const double> x) {
    const double v = x[static_cast<std::size_t>(n.feature)];
    if (std::isnan(v)) return n.default_left ? n.left : n.right;
    return v < n.threshold ? n.left : n.right;
}

// Decision-path bookkeeping for the polynomial-time recursion. pweight of
// element i is the permutation weight of subsets with i features fixed.
struct PathElement {
    int feature = -1;
    double zero_fraction = 0.0;
    double one_fraction = 0.0;
    double pweight = 0.0;
};

void extend_path(PathElement* path, int depth, double zero_fraction, double one_fraction,
                 int feature) {
    path[depth] = {feature, zero_fraction, one_fraction, depth == 0 ? 1.0 : 0.0};
    for (int i = depth - 1; i >= 0; --i) {
        path[i + 1].pweight +=
            one_fraction * path[i].pweight * (i + 1) / static_cast<double>(depth + 1);
        path[i].pweight =
            zero_fraction * path[i].pweight * (depth - i) / static_cast<double>(depth + 1);
    }
}

void unwind_path(PathElement* path, int depth, int index) {
    const double one_fraction = path[index].one_fraction;
    const double zero_fraction = path[index].zero_fraction;
    double next_one = path[depth].pweight;
    for (int i = depth - 1; i >= 0; --i) {
        if (one_fraction != 0.0) {
            const double tmp = path[i].pweight;
            path[i].pweight = next_one * (depth + 1) / ((i + 1) * one_fraction);
            next_one = tmp - path[i].pweight * zero_fraction * (depth - i) /
                                 static_cast<double>(depth + 1);
        } else {
            path[i].pweight = path[i].pweight * (depth + 1) / (zero_fraction * (depth - i));
        }
    }
    for (int i = index; i < depth; ++i) {
        path[i].feature = path[i + 1].feature;
        path[i].zero_fraction = path[i + 1].zero_fraction;
        path[i].one_fraction = path[i + 1].one_fraction;
    }
}

double unwound_path_sum(const PathElement* path, int depth, int index) {
    const double one_fraction = path[index].one_fraction;
    const double zero_fraction = path[index].zero_fraction;
    double next_one = path[depth].pweight;
    double total = 0.0;
    for (int i = depth - 1; i >= 0; --i) {
        if (one_fraction != 0.0) {
            const double tmp = next_one * (depth + 1) / ((i + 1) * one_fraction);
            total += tmp;
            next_one = path[i].pweight - tmp * zero_fraction * (depth - i) /
                                             static_cast<double>(depth + 1);
        } else if (zero_fraction != 0.0) {
            total += (path[i].pweight / zero_fraction) /
                     ((depth - i) / static_cast<double>(depth + 1));
        }
    }
    return total;
}

void check_cover(double cover) {
    if (!(cover > 0.0)) throw ModelIntegrityError("non-positive node cover in tree model");
}

void tree_shap_recurse(const Tree& t, std::span<const double> x, double* phi, int node_id,
                       int depth, PathElement* parent_path, double parent_zero, double parent_one,
                       int parent_feature) {
    PathElement* path = parent_path + depth + 1;
    std::copy(parent_path, parent_path + depth + 1, path);
    extend_path(path, depth, parent_zero, parent_one, parent_feature);

    const TreeNode& node = t.nodes[static_cast<std::size_t>(node_id)];
    if (node.feature < 0) {
        for (int i = 1; i <= depth; ++i) {
            const double w = unwound_path_sum(path, depth, i);
            const PathElement& el = path[i];
            phi[el.feature] += w * (el.one_fraction - el.zero_fraction) * node.value;
        }
        return;
    }

    check_cover(node.cover);
    const int hot = hot_child(node, x);
    const int cold = (hot == node.left) ? node.right : node.left;
    const double hot_cover = t.nodes[static_cast<std::size_t>(hot)].cover;
    const double cold_cover = t.nodes[static_cast<std::size_t>(cold)].cover;
    check_cover(hot_cover);
    check_cover(cold_cover);
    const double hot_zero = hot_cover / node.cover;
    const double cold_zero = cold_cover / node.cover;

    // if this feature was split on above, undo that extension and redo it here
    double incoming_zero = 1.0;
    double incoming_one = 1.0;
    int path_index = 0;
    while (path_index <= depth && path[path_index].feature != node.feature) ++path_index;
    if (path_index != depth + 1) {
        incoming_zero = path[path_index].zero_fraction;
        incoming_one = path[path_index].one_fraction;
        unwind_path(path, depth, path_index);
        depth -= 1;
    }

    tree_shap_recurse(t, x, phi, hot, depth + 1, path, hot_zero * incoming_zero, incoming_one,
                      node.feature);
    tree_shap_recurse(t, x, phi, cold, depth + 1, path, cold_zero * incoming_zero, 0.0,
                      node.feature);
}

}  // namespace

double tree_expectation(const Tree& t) {
    // preorder layout: compute bottom-up over reversed node order
    std::vector<double> e(t.nodes.size(), 0.0);
    for (std::size_t k = t.nodes.size(); k-- > 0;) {
        const auto& n = t.nodes[k];
        if (n.feature < 0) {
            e[k] = n.value;
        } else {
            check_cover(n.cover);
            const auto l = static_cast<std::size_t>(n.left);
            const auto r = static_cast<std::size_t>(n.right);
            e[k] = (t.nodes[l].cover / n.cover) * e[l] + (t.nodes[r].cover / n.cover) * e[r];
        }
    }
    return e[0];
}

Attribution tree_shap(const TreeEnsemble& e, std::span<const double> x) {
    if (static_cast<int>(x.size()) != e.n_features)
        throw ModelIntegrityError("tree_shap: feature count mismatch");
    Attribution out;
    out.phi.assign(static_cast<std::size_t>(e.n_features), 0.0);
    out.base_value = e.base_score;
    for (const auto& t : e.trees) {
        const int d = t.max_depth();
        std::vector<PathElement> scratch(static_cast<std::size_t>((d + 2) * (d + 3) / 2));
        tree_shap_recurse(t, x, out.phi.data(), 0, 0, scratch.data(), 1.0, 1.0, -1);
        out.base_value += tree_expectation(t);
    }
    return out;
}

namespace {

// Value of a coalition: features in `mask` follow x, the rest marginalize by
// cover ratios.
double coalition_value(const Tree& t, int node_id, std::span<const double> x,
                       std::uint32_t mask) {
    const TreeNode& n = t.nodes[static_cast<std::size_t>(node_id)];
    if (n.feature < 0) return n.value;
    const auto l = static_cast<std::size_t>(n.left);
    const auto r = static_cast<std::size_t>(n.right);
    check_cover(n.cover);
    check_cover(t.nodes[l].cover);
    check_cover(t.nodes[r].cover);
    if ((mask >> n.feature) & 1u) return coalition_value(t, hot_child(n, x), x, mask);
    return (t.nodes[l].cover / n.cover) * coalition_value(t, n.left, x, mask) +
           (t.nodes[r].cover / n.cover) * coalition_value(t, n.right, x, mask);
}

}  // namespace

std::vector<double> brute_force_shap(const TreeEnsemble& e, std::span<const double> x) {
    const int m = e.n_features;
    if (m > 15) throw std::invalid_argument("brute_force_shap: too many features");
    if (static_cast<int>(x.size()) != m)
        throw ModelIntegrityError("brute_force_shap: feature count mismatch");

    const std::uint32_t n_masks = 1u << m;
    std::vector<double> v(n_masks, 0.0);
    for (std::uint32_t mask = 0; mask < n_masks; ++mask)
        for (const auto& t : e.trees) v[mask] += coalition_value(t, 0, x, mask);

    std::vector<double> factorial(static_cast<std::size_t>(m) + 1, 1.0);
    for (int i = 1; i <= m; ++i)
        factorial[static_cast<std::size_t>(i)] = factorial[static_cast<std::size_t>(i - 1)] * i;
    // weight of a coalition of size k against the full player set of size m
    std::vector<double> weight(static_cast<std::size_t>(m), 0.0);
    for (int k = 0; k < m; ++k)
        weight[static_cast<std::size_t>(k)] =
            factorial[static_cast<std::size_t>(k)] *
            factorial[static_cast<std::size_t>(m - k - 1)] / factorial[static_cast<std::size_t>(m)];

    std::vector<double> phi(static_cast<std::size_t>(m), 0.0);
    for (int j = 0; j < m; ++j) {
        const std::uint32_t bit = 1u << j;
        double sum = 0.0;
        for (std::uint32_t mask = 0; mask < n_masks; ++mask) {
            if (mask & bit) continue;
            const int k = std::popcount(mask);
            sum += weight[static_cast<std::size_t>(k)] * (v[mask | bit] - v[mask]);
        }
        phi[static_cast<std::size_t>(j)] = sum;
    }
    return phi;
}

AttributionMatrix attribute_matrix(const TreeEnsemble& e, const FeatureMatrix& X,
                                   const TargetCode& target, int jobs) {
    if (X.cols != e.n_features)
        throw ModelIntegrityError("attribute_matrix: feature count mismatch");
    AttributionMatrix m;
    m.rows = X.rows;
    m.cols = e.n_features;
    m.values.assign(m.rows * static_cast<std::size_t>(m.cols), 0.0);
    m.schema_fingerprint = e.schema_fingerprint;
    m.target = target;

    if (X.rows == 0) {
        m.base_value = e.base_score;
        for (const auto& t : e.trees) m.base_value += tree_expectation(t);
        return m;
    }

    const int n_workers = std::max(1, std::min<int>(jobs, static_cast<int>(X.rows)));
    std::exception_ptr first_error;
    std::mutex error_mutex;
    auto worker = [&](int w) {
        try {
            std::vector<double> row(static_cast<std::size_t>(X.cols));
            for (std::size_t r = static_cast<std::size_t>(w); r < X.rows;
                 r += static_cast<std::size_t>(n_workers)) {
                X.get_row(r, row);
                const Attribution a = tree_shap(e, row);
                std::copy(a.phi.begin(), a.phi.end(),
                          m.values.begin() + r * static_cast<std::size_t>(m.cols));
                if (r == 0) m.base_value = a.base_value;
            }
        } catch (...) {
            std::lock_guard<std::mutex> lock(error_mutex);
            if (!first_error) first_error = std::current_exception();
        }
    };
    if (n_workers == 1) {
        worker(0);
    } else {
        std::vector<std::thread> threads;
        threads.reserve(static_cast<std::size_t>(n_workers));
        for (int w = 0; w < n_workers; ++w) threads.emplace_back(worker, w);
        for (auto& t : threads) t.join();
    }
    if (first_error) std::rethrow_exception(first_error);
    return m;
}

ShapSummary shap_summary(const AttributionMatrix& m) {
    ShapSummary s;
    s.mean_abs.assign(static_cast<std::size_t>(m.cols), 0.0);
    for (std::size_t r = 0; r < m.rows; ++r)
        for (int c = 0; c < m.cols; ++c)
            s.mean_abs[static_cast<std::size_t>(c)] += std::abs(m.at(r, c));
    if (m.rows > 0)
        for (auto& v : s.mean_abs) v /= static_cast<double>(m.rows);

    s.ranking.resize(static_cast<std::size_t>(m.cols));
    std::iota(s.ranking.begin(), s.ranking.end(), 0);
    std::stable_sort(s.ranking.begin(), s.ranking.end(), [&](int a, int b) {
        const double ma = s.mean_abs[static_cast<std::size_t>(a)];
        const double mb = s.mean_abs[static_cast<std::size_t>(b)];
        if (ma != mb) return ma > mb;
        return a < b;
    });
    s.rank_of.assign(static_cast<std::size_t>(m.cols), 0);
    for (int pos = 0; pos < m.cols; ++pos)
        s.rank_of[static_cast<std::size_t>(s.ranking[static_cast<std::size_t>(pos)])] = pos;
    return s;
}

namespace {

// mid-rank percentile of v among the sorted present values of one feature
double percentile_of(const std::vector<double>& sorted, double v) {
    const auto lo = std::lower_bound(sorted.begin(), sorted.end(), v);
    const auto hi = std::upper_bound(sorted.begin(), sorted.end(), v);
    const double less = static_cast<double>(lo - sorted.begin());
    const double equal = static_cast<double>(hi - lo);
    return 100.0 * (less + 0.5 * equal) / static_cast<double>(sorted.size());
}

}  // namespace

std::vector<BeeswarmRow> beeswarm_rows(const AttributionMatrix& m, const FeatureMatrix& X) {
    if (X.rows != m.rows || X.cols != m.cols)
        throw std::invalid_argument("beeswarm_rows: matrix shape mismatch");
    const ShapSummary summary = shap_summary(m);

    std::vector<std::vector<double>> sorted_present(static_cast<std::size_t>(m.cols));
    for (int c = 0; c < m.cols; ++c) {
        auto& v = sorted_present[static_cast<std::size_t>(c)];
        for (const double x : X.column(c))
            if (!std::isnan(x)) v.push_back(x);
        std::sort(v.begin(), v.end());
    }

    std::vector<BeeswarmRow> rows;
    rows.reserve(m.rows * static_cast<std::size_t>(m.cols));
    for (std::size_t r = 0; r < m.rows; ++r) {
        for (int c = 0; c < m.cols; ++c) {
            BeeswarmRow row;
            row.sample = r;
            row.feature = c;
            row.rank = summary.rank_of[static_cast<std::size_t>(c)] + 1;
            row.shap_value = m.at(r, c);
            const double v = X.at(r, c);
            if (!std::isnan(v)) {
                row.feature_value = v;
                const auto& sorted = sorted_present[static_cast<std::size_t>(c)];
                if (!sorted.empty()) row.feature_percentile = percentile_of(sorted, v);
            }
            rows.push_back(row);
        }
    }
    return rows;
}

void write_beeswarm_csv(std::ostream& out, const AttributionMatrix& m, const FeatureMatrix& X,
                        const FeatureSchema& schema, std::span<const std::string> record_ids) {
    if (record_ids.size() != m.rows)
        throw std::invalid_argument("write_beeswarm_csv: record id count mismatch");
    out << "target,record_id,feature,rank,shap_value,feature_value,feature_percentile\n";
    for (const auto& row : beeswarm_rows(m, X)) {
        out << m.target.code << ',' << record_ids[row.sample] << ','
            << schema.field(row.feature).name << ',' << row.rank << ','
            << format_double(row.shap_value) << ',';
        if (row.feature_value.has_value()) out << format_double(*row.feature_value);
        out << ',';
        if (row.feature_percentile.has_value()) out << format_double(*row.feature_percentile);
        out << '\n';
    }
}

void write_beeswarm_csv(const std::filesystem::path& path, const AttributionMatrix& m,
                        const FeatureMatrix& X, const FeatureSchema& schema,
                        std::span<const std::string> record_ids) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write beeswarm file: " + path.string());
    write_beeswarm_csv(out, m, X, schema, record_ids);
}

}  // namespace ecgdx
