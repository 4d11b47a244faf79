#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "ecgdx/gbdt.hpp"
#include "ecgdx/metrics.hpp"
#include "ecgdx/rng.hpp"

using namespace ecgdx;

namespace {

// Central finite differences of the log-loss in extended precision.
void fd_grad_hess(double margin, int label, double& g, double& h) {
    const long double step = 1e-3L;
    auto loss = [&](long double m) -> long double {
        const long double a = m > 0.0L ? m : 0.0L;
        return a - static_cast<long double>(label) * m +
               std::log(std::exp(-a) + std::exp(m - a));
    };
    const long double m = margin;
    g = static_cast<double>((loss(m + step) - loss(m - step)) / (2.0L * step));
    h = static_cast<double>((loss(m + step) - 2.0L * loss(m) + loss(m - step)) / (step * step));
}

FeatureMatrix make_matrix(std::size_t rows, int cols) {
    FeatureMatrix m;
    m.rows = rows;
    m.cols = cols;
    m.data.assign(rows * static_cast<std::size_t>(cols),
                  std::numeric_limits<double>::quiet_NaN());
    return m;
}

// Mirrors the production candidate semantics independently: exhaustive walk
// over every (feature, boundary, default direction) triple in tie-break
// order, accepting only strictly better gains.
SplitCandidate brute_force_split(const FeatureMatrix& X, const std::vector<GradHess>& gh,
                                 const std::vector<std::uint32_t>& rows, const TrainParams& p) {
    SplitCandidate best;
    double tot_g = 0.0, tot_h = 0.0;
    for (const auto r : rows) {
        tot_g += gh[r].g;
        tot_h += gh[r].h;
    }
    for (int f = 0; f < X.cols; ++f) {
        std::vector<std::uint32_t> present;
        for (const auto r : rows)
            if (!std::isnan(X.at(r, f))) present.push_back(r);
        std::sort(present.begin(), present.end(), [&](std::uint32_t a, std::uint32_t b) {
            if (X.at(a, f) != X.at(b, f)) return X.at(a, f) < X.at(b, f);
            return a < b;
        });
        double pres_g = 0.0, pres_h = 0.0;
        for (const auto r : present) {
            pres_g += gh[r].g;
            pres_h += gh[r].h;
        }
        const double miss_g = tot_g - pres_g;
        const double miss_h = tot_h - pres_h;
        const double parent_term = tot_g * tot_g / (tot_h + p.l2_reg);
        double gl = 0.0, hl = 0.0;
        for (std::size_t i = 0; i + 1 < present.size(); ++i) {
            gl += gh[present[i]].g;
            hl += gh[present[i]].h;
            const double lo = X.at(present[i], f);
            const double hi = X.at(present[i + 1], f);
            if (lo == hi) continue;
            const double t = lo + 0.5 * (hi - lo);
            if (!(lo < t && t <= hi)) continue;
            const double gr = pres_g - gl;
            const double hr = pres_h - hl;
            for (int d = 0; d < 2; ++d) {
                const bool default_left = (d == 0);
                const double G_L = default_left ? gl + miss_g : gl;
                const double H_L = default_left ? hl + miss_h : hl;
                const double G_R = default_left ? gr : gr + miss_g;
                const double H_R = default_left ? hr : hr + miss_h;
                if (H_L < p.min_child_weight || H_R < p.min_child_weight) continue;
                const double gain =
                    0.5 * (G_L * G_L / (H_L + p.l2_reg) + G_R * G_R / (H_R + p.l2_reg) -
                           parent_term) -
                    p.min_split_gain;
                if (gain > best.gain) {
                    best.feature = f;
                    best.threshold = t;
                    best.default_left = default_left;
                    best.gain = gain;
                }
            }
        }
    }
    return best;
}

// Dyadic-rational gradients keep all aggregate sums exact, so brute force
// and the scan agree bit-for-bit, ties included.
GradHess dyadic_gh(Rng& rng) {
    const double g = (static_cast<double>(rng.bounded(1025)) - 512.0) / 1024.0;
    const double h = (static_cast<double>(rng.bounded(512)) + 1.0) / 1024.0;
    return {g, h};
}

double tree_cover_mismatch(const Tree& t) {
    double worst = 0.0;
    for (const auto& n : t.nodes)
        if (n.feature >= 0)
            worst = std::max(worst,
                             std::abs(n.cover - (t.nodes[static_cast<std::size_t>(n.left)].cover +
                                                 t.nodes[static_cast<std::size_t>(n.right)].cover)));
    return worst;
}

struct ToyData {
    FeatureMatrix X;
    std::vector<int> y;
};

// Linearly separable in feature 0.
ToyData separable(std::size_t n) {
    ToyData d;
    d.X = make_matrix(n, 3);
    d.y.resize(n);
    Rng rng(3);
    for (std::size_t i = 0; i < n; ++i) {
        const int label = i % 2 == 0;
        d.y[i] = label;
        d.X.at(i, 0) = label ? 1.0 + rng.uniform01() : -1.0 - rng.uniform01();
        d.X.at(i, 1) = rng.uniform01();
        d.X.at(i, 2) = rng.uniform01();
    }
    return d;
}

}  // namespace

TEST_CASE("logistic gradients at margin zero") {
    const auto a = logistic_grad_hess(0.0, 1);
    CHECK(a.g == doctest::Approx(-0.5).epsilon(1e-15));
    CHECK(a.h == doctest::Approx(0.25).epsilon(1e-15));
    const auto b = logistic_grad_hess(0.0, 0);
    CHECK(b.g == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(b.h == doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("logistic gradients at margin two match finite differences") {
    const auto gh = logistic_grad_hess(2.0, 1);
    CHECK(gh.g == doctest::Approx(-0.11920292202211755).epsilon(1e-12));
    CHECK(gh.h == doctest::Approx(0.104993585403506).epsilon(1e-9));
    double g_fd = 0.0, h_fd = 0.0;
    fd_grad_hess(2.0, 1, g_fd, h_fd);
    CHECK(gh.g == doctest::Approx(g_fd).epsilon(1e-6));
    CHECK(gh.h == doctest::Approx(h_fd).epsilon(1e-6));
}

TEST_CASE("gradients match finite differences across the margin grid") {
    for (int label = 0; label <= 1; ++label) {
        for (double m = -10.0; m <= 10.0 + 1e-9; m += 0.5) {
            const auto gh = logistic_grad_hess(m, label);
            double g_fd = 0.0, h_fd = 0.0;
            fd_grad_hess(m, label, g_fd, h_fd);
            CHECK(std::abs(gh.g - g_fd) <= 1e-6 * std::max(std::abs(g_fd), 1e-12));
            CHECK(std::abs(gh.h - h_fd) <= 1e-6 * std::max(std::abs(h_fd), 1e-12));
        }
    }
}

TEST_CASE("find_best_split: no threshold exists for constant features") {
    auto X = make_matrix(6, 2);
    std::vector<GradHess> gh(6);
    std::vector<std::uint32_t> rows(6);
    std::iota(rows.begin(), rows.end(), 0u);
    for (std::size_t i = 0; i < 6; ++i) {
        X.at(i, 0) = 3.5;
        X.at(i, 1) = -1.0;
        gh[i] = {i % 2 ? 0.5 : -0.5, 0.25};
    }
    CHECK(!find_best_split(X, gh, rows, TrainParams{}).valid());
}

TEST_CASE("find_best_split: two-sample formula instantiation") {
    auto X = make_matrix(2, 1);
    X.at(0, 0) = 1.0;
    X.at(1, 0) = 2.0;
    const std::vector<GradHess> gh = {logistic_grad_hess(0.0, 0), logistic_grad_hess(0.0, 1)};
    const std::vector<std::uint32_t> rows = {0, 1};
    TrainParams p;
    p.l2_reg = 0.0;
    p.min_split_gain = 0.0;
    p.min_child_weight = 0.0;
    const auto best = find_best_split(X, gh, rows, p);
    REQUIRE(best.valid());
    CHECK(best.feature == 0);
    CHECK(best.threshold == doctest::Approx(1.5));
    const double g0 = gh[0].g, h0 = gh[0].h, g1 = gh[1].g, h1 = gh[1].h;
    const double expected =
        0.5 * (g0 * g0 / h0 + g1 * g1 / h1 - (g0 + g1) * (g0 + g1) / (h0 + h1));
    CHECK(best.gain == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("find_best_split equals exhaustive enumeration") {
    Rng rng(91);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 2 + rng.bounded(12);
        const int cols = 1 + static_cast<int>(rng.bounded(3));
        auto X = make_matrix(n, cols);
        std::vector<GradHess> gh(n);
        for (std::size_t i = 0; i < n; ++i) {
            gh[i] = dyadic_gh(rng);
            for (int f = 0; f < cols; ++f)
                if (!rng.bernoulli(0.2))
                    X.at(i, f) = static_cast<double>(rng.bounded(8));  // heavy value ties
        }
        // duplicated column forces exact cross-feature gain ties
        if (cols >= 2 && trial % 3 == 0)
            for (std::size_t i = 0; i < n; ++i) X.at(i, 1) = X.at(i, 0);

        std::vector<std::uint32_t> rows(n);
        std::iota(rows.begin(), rows.end(), 0u);
        TrainParams p;
        p.min_child_weight = trial % 2 ? 0.0 : 0.25;
        const auto fast = find_best_split(X, gh, rows, p);
        const auto slow = brute_force_split(X, gh, rows, p);
        CHECK(fast.valid() == slow.valid());
        if (fast.valid()) {
            CHECK(fast.feature == slow.feature);
            CHECK(fast.threshold == slow.threshold);
            CHECK(fast.default_left == slow.default_left);
            CHECK(fast.gain == slow.gain);
        }
    }
}

TEST_CASE("grow_tree with max_depth zero yields the pooled leaf") {
    auto X = make_matrix(5, 1);
    std::vector<GradHess> gh(5);
    double G = 0.0, H = 0.0;
    for (std::size_t i = 0; i < 5; ++i) {
        X.at(i, 0) = static_cast<double>(i);
        gh[i] = logistic_grad_hess(0.0, i % 2);
        G += gh[i].g;
        H += gh[i].h;
    }
    TrainParams p;
    p.max_depth = 0;
    const auto cols = ColumnIndex::build(X);
    const Tree t = grow_tree(X, cols, gh, p);
    REQUIRE(t.nodes.size() == 1);
    CHECK(t.nodes[0].feature == -1);
    CHECK(t.nodes[0].value == doctest::Approx(-p.learning_rate * G / (H + p.l2_reg)));
    CHECK(t.nodes[0].cover == doctest::Approx(H));
}

TEST_CASE("pure nodes stay leaves") {
    auto X = make_matrix(10, 2);
    std::vector<GradHess> gh(10);
    Rng rng(4);
    for (std::size_t i = 0; i < 10; ++i) {
        X.at(i, 0) = rng.uniform01();
        X.at(i, 1) = rng.uniform01();
        gh[i] = logistic_grad_hess(0.3, 1);  // identical label and margin
    }
    const auto cols = ColumnIndex::build(X);
    const Tree t = grow_tree(X, cols, gh, TrainParams{});
    CHECK(t.leaf_only());
}

TEST_CASE("planted step function is recovered by a depth-one tree") {
    auto X = make_matrix(16, 2);
    std::vector<GradHess> gh(16);
    for (std::size_t i = 0; i < 16; ++i) {
        const int label = i < 8 ? 0 : 1;
        X.at(i, 0) = i < 8 ? 0.0 : 1.0;
        X.at(i, 1) = static_cast<double>(i % 4);  // uninformative
        gh[i] = logistic_grad_hess(0.0, label);
    }
    const auto cols = ColumnIndex::build(X);
    const Tree t = grow_tree(X, cols, gh, TrainParams{});
    REQUIRE(t.nodes.size() == 3);
    CHECK(t.nodes[0].feature == 0);
    CHECK(t.nodes[0].threshold == doctest::Approx(0.5));
    CHECK(t.nodes[static_cast<std::size_t>(t.nodes[0].left)].value < 0.0);   // label-0 side
    CHECK(t.nodes[static_cast<std::size_t>(t.nodes[0].right)].value > 0.0);  // label-1 side
}

TEST_CASE("train separates a separable toy set and stops early") {
    const auto d = separable(400);
    const auto dv = separable(120);
    TrainParams p;
    p.n_rounds_max = 100;
    const auto r = train(d.X, d.y, dv.X, dv.y, {"K70", ""}, p, 0);
    CHECK(r.best_val_auroc == 1.0);
    CHECK(r.history[static_cast<std::size_t>(r.best_round)].val_auroc == 1.0);
    // early stop fired within patience rounds of the best round
    CHECK(static_cast<int>(r.history.size()) <= r.best_round + p.patience + 1);
    CHECK(static_cast<int>(r.ensemble.trees.size()) == r.best_round + 1);
}

TEST_CASE("label permutation null lands near chance") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Rng rng(9000 + seed);
        const std::size_t n = 1600, nv = 400;
        auto X = make_matrix(n, 3);
        auto Xv = make_matrix(nv, 3);
        std::vector<int> y(n), yv(nv);
        for (std::size_t i = 0; i < n; ++i) {
            y[i] = rng.bernoulli(0.3);
            for (int f = 0; f < 3; ++f) X.at(i, f) = rng.uniform01();
        }
        for (std::size_t i = 0; i < nv; ++i) {
            yv[i] = rng.bernoulli(0.3);
            for (int f = 0; f < 3; ++f) Xv.at(i, f) = rng.uniform01();
        }
        TrainParams p;
        p.n_rounds_max = 30;
        const auto r = train(X, y, Xv, yv, {"K70", ""}, p, 0);
        CHECK(r.best_val_auroc > 0.4);
        CHECK(r.best_val_auroc < 0.6);
    }
}

TEST_CASE("early-stop bookkeeping matches a fresh evaluation of the pruned model") {
    const auto d = separable(300);
    Rng rng(12);
    auto Xv = make_matrix(100, 3);
    std::vector<int> yv(100);
    for (std::size_t i = 0; i < 100; ++i) {
        yv[i] = rng.bernoulli(0.5);
        Xv.at(i, 0) = (yv[i] ? 1.0 : -1.0) + 3.0 * rng.uniform01();  // noisy validation
        Xv.at(i, 1) = rng.uniform01();
        Xv.at(i, 2) = rng.uniform01();
    }
    TrainParams p;
    p.n_rounds_max = 60;
    const auto r = train(d.X, d.y, Xv, yv, {"K72", ""}, p, 0);
    const auto margins = predict_margins(r.ensemble, Xv);
    CHECK(auroc(margins, yv) == r.history[static_cast<std::size_t>(r.best_round)].val_auroc);
    double best = 0.0;
    for (const auto& rec : r.history) best = std::max(best, rec.val_auroc);
    CHECK(best == r.best_val_auroc);
}

TEST_CASE("training is deterministic") {
    const auto d = separable(200);
    const auto dv = separable(80);
    TrainParams p;
    p.n_rounds_max = 25;
    const auto a = train(d.X, d.y, dv.X, dv.y, {"K70", ""}, p, 7);
    const auto b = train(d.X, d.y, dv.X, dv.y, {"K70", ""}, p, 7);
    CHECK(ensemble_to_json(a.ensemble, {"K70", ""}) == ensemble_to_json(b.ensemble, {"K70", ""}));
}

TEST_CASE("degenerate validation fold names the target") {
    const auto d = separable(100);
    auto Xv = make_matrix(20, 3);
    std::vector<int> yv(20, 1);
    for (std::size_t i = 0; i < 20; ++i)
        for (int f = 0; f < 3; ++f) Xv.at(i, f) = 0.1;
    try {
        train(d.X, d.y, Xv, yv, {"K7290", ""}, TrainParams{}, 0);
        CHECK(false);
    } catch (const TrainError& e) {
        CHECK(std::string(e.what()).find("K7290") != std::string::npos);
    }
}

TEST_CASE("cover conservation holds on trained trees") {
    Rng rng(6);
    auto X = make_matrix(500, 4);
    std::vector<int> y(500);
    for (std::size_t i = 0; i < 500; ++i) {
        for (int f = 0; f < 4; ++f)
            if (!rng.bernoulli(0.15)) X.at(i, f) = rng.uniform01() * 10.0;
        const double v = std::isnan(X.at(i, 0)) ? 5.0 : X.at(i, 0);
        y[i] = rng.uniform01() < (v / 10.0);
    }
    auto Xv = gather_rows(X, std::vector<std::size_t>{0, 1, 2, 3, 4, 5, 6, 7, 8, 9});
    std::vector<int> yv(y.begin(), y.begin() + 10);
    yv[0] = 1;
    yv[1] = 0;
    TrainParams p;
    p.n_rounds_max = 15;
    const auto r = train(X, y, Xv, yv, {"K70", ""}, p, 0);
    for (const auto& t : r.ensemble.trees) {
        CHECK(tree_cover_mismatch(t) <= 1e-9);
        for (const auto& n : t.nodes) CHECK(n.cover > 0.0);
    }
}

TEST_CASE("predict: empty ensemble returns the base score everywhere") {
    TreeEnsemble e;
    e.base_score = -2.75;
    e.n_features = 10;
    std::vector<double> x(10, 1.0);
    CHECK(predict_margin(e, x) == -2.75);
    x.assign(10, std::numeric_limits<double>::quiet_NaN());
    CHECK(predict_margin(e, x) == -2.75);
}

TEST_CASE("predict: all-missing rows route deterministically") {
    Rng rng(19);
    auto X = make_matrix(400, 3);
    std::vector<int> y(400);
    for (std::size_t i = 0; i < 400; ++i) {
        for (int f = 0; f < 3; ++f)
            if (!rng.bernoulli(0.3)) X.at(i, f) = rng.uniform01();
        y[i] = rng.bernoulli(0.5 + (std::isnan(X.at(i, 0)) ? 0.0 : 0.3 * X.at(i, 0)));
    }
    auto Xv = gather_rows(X, std::vector<std::size_t>{0, 1, 2, 3, 4, 5, 6, 7});
    std::vector<int> yv(y.begin(), y.begin() + 8);
    yv[0] = 1;
    yv[1] = 0;
    TrainParams p;
    p.n_rounds_max = 10;
    const auto r = train(X, y, Xv, yv, {"K70", ""}, p, 0);
    const std::vector<double> all_missing(3, std::numeric_limits<double>::quiet_NaN());
    const double m1 = predict_margin(r.ensemble, all_missing);
    const double m2 = predict_margin(r.ensemble, all_missing);
    CHECK(m1 == m2);
    CHECK(std::isfinite(m1));
}

TEST_CASE("proba is strictly increasing in margin") {
    const auto d = separable(300);
    const auto dv = separable(60);
    TrainParams p;
    p.n_rounds_max = 12;
    const auto r = train(d.X, d.y, dv.X, dv.y, {"K70", ""}, p, 0);
    Rng rng(33);
    std::vector<std::pair<double, double>> pairs;
    std::vector<double> x(3);
    for (int i = 0; i < 100; ++i) {
        for (auto& v : x) v = -2.0 + 4.0 * rng.uniform01();
        pairs.emplace_back(predict_margin(r.ensemble, x), predict_proba(r.ensemble, x));
    }
    std::sort(pairs.begin(), pairs.end());
    for (std::size_t i = 1; i < pairs.size(); ++i) {
        if (pairs[i].first > pairs[i - 1].first) CHECK(pairs[i].second > pairs[i - 1].second);
        else CHECK(pairs[i].second == pairs[i - 1].second);
    }
}

TEST_CASE("model serialization round-trips bit-exactly") {
    const auto d = separable(250);
    const auto dv = separable(70);
    TrainParams p;
    p.n_rounds_max = 20;
    p.seed = 1234;
    const auto r = train(d.X, d.y, dv.X, dv.y, {"K703", "chain-middle"}, p, 99);
    const std::string doc = ensemble_to_json(r.ensemble, {"K703", "chain-middle"});
    const ModelFile m = ensemble_from_json(doc);
    CHECK(m.target.code == "K703");
    CHECK(ensemble_to_json(m.ensemble, m.target) == doc);
    CHECK(m.ensemble.schema_fingerprint == r.ensemble.schema_fingerprint);
    CHECK(m.ensemble.base_score == r.ensemble.base_score);

    Rng rng(77);
    std::vector<double> x(3);
    for (int i = 0; i < 50; ++i) {
        for (auto& v : x) v = -3.0 + 6.0 * rng.uniform01();
        CHECK(predict_margin(m.ensemble, x) == predict_margin(r.ensemble, x));
    }
}
