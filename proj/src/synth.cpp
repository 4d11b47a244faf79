#include "ecgdx/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include <nlohmann/json.hpp>

#include "ecgdx/gbdt.hpp"  // sigmoid
#include "ecgdx/metrics.hpp"
#include "ecgdx/rng.hpp"

namespace ecgdx {

namespace {

constexpr std::size_t kBlockSize = 4096;
constexpr std::size_t kCalibrationDraws = 20000;
const double kLn3 = std::log(3.0);

double logistic_cdf(double x, double median, double scale) {
    return sigmoid((x - median) / scale);
}

// Logistic location/scale adjusted so that the TRUNCATED distribution hits
// the requested median and IQR exactly. Truncation to the plausible range
// would otherwise shift both (visibly so for age, whose lower bound cuts
// real tail mass).
struct ResolvedMarginal {
    double mu = 0.0;
    double s = 1.0;
    double lo = 0.0;
    double hi = 0.0;

    double quantile(double p) const {
        const double a = logistic_cdf(lo, mu, s);
        const double b = logistic_cdf(hi, mu, s);
        const double q = a + p * (b - a);
        return mu + s * std::log(q / (1.0 - q));
    }
};

ResolvedMarginal resolve_marginal(const MarginalSpec& m, double lo, double hi) {
    ResolvedMarginal r{m.median, m.scale(), lo, hi};
    for (int it = 0; it < 80; ++it) {
        const double med = r.quantile(0.5);
        const double width = r.quantile(0.75) - r.quantile(0.25);
        r.mu += m.median - med;
        r.s *= m.iqr / width;
    }
    const double med_err = std::abs(r.quantile(0.5) - m.median);
    const double width = r.quantile(0.75) - r.quantile(0.25);
    if (med_err > 1e-6 * std::max(1.0, std::abs(m.median)) ||
        std::abs(width - m.iqr) > 1e-6 * m.iqr)
        throw SynthError("synth spec: marginal cannot hit its median/IQR inside [" +
                         std::to_string(lo) + ", " + std::to_string(hi) + "]");
    return r;
}

// Inverse CDF of the truncated distribution; u in [0, 1).
double inv_truncated_logistic(double u, const ResolvedMarginal& r) {
    const double a = logistic_cdf(r.lo, r.mu, r.s);
    const double b = logistic_cdf(r.hi, r.mu, r.s);
    const double q = a + u * (b - a);
    return r.mu + r.s * std::log(q / (1.0 - q));
}

struct StandardizedSample {
    std::array<double, kNumFeatures> z{};  // standardized true values
};

struct ResolvedMarginals {
    std::array<ResolvedMarginal, kNumEcgFeatures + 1> continuous;  // 8 ECG + age

    static ResolvedMarginals from(const SynthSpec& spec) {
        const auto& schema = FeatureSchema::canonical();
        ResolvedMarginals out;
        for (int f = 0; f < kNumEcgFeatures; ++f) {
            const auto& d = schema.field(f);
            out.continuous[static_cast<std::size_t>(f)] =
                resolve_marginal(spec.ecg[static_cast<std::size_t>(f)], d.range_lo, d.range_hi);
        }
        const auto& ad = schema.field(kAgeIndex);
        out.continuous[kNumEcgFeatures] = resolve_marginal(spec.age, ad.range_lo, ad.range_hi);
        return out;
    }
};

// Raw continuous draws for one sample given 9 uniforms (8 ECG + age).
// Standardization anchors stay on the spec's nominal median/scale so planted
// coefficients keep their meaning.
void draw_true_values(const SynthSpec& spec, const ResolvedMarginals& rm,
                      const std::array<double, kNumEcgFeatures + 1>& uniforms, double sex,
                      std::array<double, kNumFeatures>& raw,
                      std::array<double, kNumFeatures>& z) {
    for (int f = 0; f < kNumEcgFeatures; ++f) {
        const auto& m = spec.ecg[static_cast<std::size_t>(f)];
        const double x = inv_truncated_logistic(uniforms[static_cast<std::size_t>(f)],
                                                rm.continuous[static_cast<std::size_t>(f)]);
        raw[static_cast<std::size_t>(f)] = x;
        z[static_cast<std::size_t>(f)] = (x - m.median) / m.scale();
    }
    const double age = inv_truncated_logistic(uniforms[kNumEcgFeatures],
                                              rm.continuous[kNumEcgFeatures]);
    raw[kAgeIndex] = age;
    z[kAgeIndex] = (age - spec.age.median) / spec.age.scale();
    raw[kSexIndex] = sex;
    z[kSexIndex] = sex - spec.male_fraction;
}

double dot_coef(const std::array<double, kNumFeatures>& coef,
                const std::array<double, kNumFeatures>& z) {
    double s = 0.0;
    for (int f = 0; f < kNumFeatures; ++f)
        s += coef[static_cast<std::size_t>(f)] * z[static_cast<std::size_t>(f)];
    return s;
}

void validate_spec(const SynthSpec& spec) {
    if (spec.n_samples == 0) throw SynthError("synth spec: n_samples must be positive");
    if (!(spec.male_fraction > 0.0 && spec.male_fraction < 1.0))
        throw SynthError("synth spec: male_fraction must lie in (0, 1)");
    for (const auto& m : spec.ecg)
        if (!(m.iqr > 0.0)) throw SynthError("synth spec: every IQR must be positive");
    if (!(spec.age.iqr > 0.0)) throw SynthError("synth spec: age IQR must be positive");
    for (const double r : spec.missing_rate)
        if (!(r >= 0.0 && r < 1.0)) throw SynthError("synth spec: missing rate must be in [0, 1)");
    for (std::size_t t = 0; t < spec.targets.size(); ++t) {
        const auto& pt = spec.targets[t];
        if (!(pt.prevalence > 0.0 && pt.prevalence < 1.0))
            throw SynthError("synth spec: prevalence must lie in (0, 1) for " + pt.code.code);
        if (pt.parent >= static_cast<int>(t))
            throw SynthError("synth spec: targets must be ordered parent-first");
        if (pt.parent >= 0 &&
            pt.prevalence > spec.targets[static_cast<std::size_t>(pt.parent)].prevalence)
            throw SynthError("synth spec: infeasible hierarchy, " + pt.code.code +
                             " prevalence exceeds its parent's");
    }
}

}  // namespace

double MarginalSpec::scale() const { return iqr / (2.0 * kLn3); }

CalibratedSynth calibrate(const SynthSpec& spec) {
    validate_spec(spec);
    const auto rm = ResolvedMarginals::from(spec);
    const std::size_t n_targets = spec.targets.size();

    // calibration draw: plain iid sampling of standardized features
    Rng rng(mix_seed(spec.seed, "calibrate"));
    std::vector<StandardizedSample> cal(kCalibrationDraws);
    for (auto& s : cal) {
        std::array<double, kNumEcgFeatures + 1> u{};
        for (auto& v : u) v = rng.uniform_open01();
        const double sex = rng.uniform01() < spec.male_fraction ? 1.0 : 0.0;
        std::array<double, kNumFeatures> raw{};
        draw_true_values(spec, rm, u, sex, raw, s.z);
    }

    CalibratedSynth out{spec, std::vector<double>(n_targets, 0.0)};
    // chain probability of being positive through the ancestors, per sample
    std::vector<std::vector<double>> chain(n_targets,
                                           std::vector<double>(kCalibrationDraws, 1.0));
    for (std::size_t t = 0; t < n_targets; ++t) {
        const auto& pt = spec.targets[t];
        const std::vector<double>& parent_chain =
            pt.parent >= 0 ? chain[static_cast<std::size_t>(pt.parent)] : chain[t];  // self = 1s

        std::vector<double> dot(kCalibrationDraws);
        for (std::size_t i = 0; i < kCalibrationDraws; ++i) dot[i] = dot_coef(pt.coef, cal[i].z);

        const auto realized = [&](double intercept) {
            double sum = 0.0;
            for (std::size_t i = 0; i < kCalibrationDraws; ++i) {
                const double base = pt.parent >= 0 ? parent_chain[i] : 1.0;
                sum += base * sigmoid(intercept + dot[i]);
            }
            return sum / static_cast<double>(kCalibrationDraws);
        };

        double lo = -60.0, hi = 60.0;
        if (realized(hi) < pt.prevalence)
            throw SynthError("synth spec: hierarchy too tight to reach prevalence for " +
                             pt.code.code);
        for (int it = 0; it < 100; ++it) {
            const double mid = 0.5 * (lo + hi);
            if (realized(mid) < pt.prevalence) lo = mid;
            else hi = mid;
        }
        const double intercept = 0.5 * (lo + hi);
        out.intercepts[t] = intercept;
        auto& self_chain = chain[t];
        for (std::size_t i = 0; i < kCalibrationDraws; ++i) {
            const double base = pt.parent >= 0 ? parent_chain[i] : 1.0;
            self_chain[i] = base * sigmoid(intercept + dot[i]);
        }
    }
    return out;
}

SynthCohort generate_records(const SynthSpec& spec) {
    const CalibratedSynth cal = calibrate(spec);
    const auto rm = ResolvedMarginals::from(spec);
    const std::size_t n = spec.n_samples;
    const std::size_t n_targets = spec.targets.size();

    // children lists, to emit only the deepest positive code of each chain
    std::vector<std::vector<std::size_t>> children(n_targets);
    for (std::size_t t = 0; t < n_targets; ++t)
        if (spec.targets[t].parent >= 0)
            children[static_cast<std::size_t>(spec.targets[t].parent)].push_back(t);

    SynthCohort out;
    out.records.resize(n);
    out.true_labels.assign(n * n_targets, 0);
    out.true_scores.assign(n * n_targets, 0.0);
    for (const auto& t : spec.targets) out.target_codes.push_back(t.code);

    const std::size_t n_blocks = (n + kBlockSize - 1) / kBlockSize;
    for (std::size_t b = 0; b < n_blocks; ++b) {
        const std::size_t lo = b * kBlockSize;
        const std::size_t m = std::min(kBlockSize, n - lo);
        Rng rng(mix_seed(mix_seed(spec.seed, "block"), b));

        // Per-feature stratified uniforms: u = (perm[i] + v) / m keeps the
        // marginal exactly uniform while pinning the empirical quantiles.
        std::array<std::vector<std::uint32_t>, kNumEcgFeatures + 1> perm;
        for (auto& p : perm) {
            p.resize(m);
            for (std::size_t i = 0; i < m; ++i) p[i] = static_cast<std::uint32_t>(i);
            rng.shuffle(p);
        }

        for (std::size_t i = 0; i < m; ++i) {
            const std::size_t row = lo + i;
            std::array<double, kNumEcgFeatures + 1> u{};
            for (std::size_t f = 0; f < u.size(); ++f)
                u[f] = (static_cast<double>(perm[f][i]) + rng.uniform01()) /
                       static_cast<double>(m);
            const double sex = rng.uniform01() < spec.male_fraction ? 1.0 : 0.0;

            std::array<double, kNumFeatures> raw{};
            std::array<double, kNumFeatures> z{};
            draw_true_values(spec, rm, u, sex, raw, z);

            std::array<bool, kNumEcgFeatures> missing{};
            for (int f = 0; f < kNumEcgFeatures; ++f)
                missing[static_cast<std::size_t>(f)] =
                    rng.uniform01() < spec.missing_rate[static_cast<std::size_t>(f)];

            auto& rec = out.records[row];
            char idbuf[32];
            std::snprintf(idbuf, sizeof(idbuf), "%s%08zu", spec.id_prefix.c_str(), row);
            rec.record_id = idbuf;
            rec.age = raw[kAgeIndex];
            rec.sex_token = sex > 0.5 ? "M" : "F";
            for (int f = 0; f < kNumEcgFeatures; ++f)
                if (!missing[static_cast<std::size_t>(f)])
                    rec.ecg[static_cast<std::size_t>(f)] = raw[static_cast<std::size_t>(f)];

            for (std::size_t t = 0; t < n_targets; ++t) {
                const auto& pt = spec.targets[t];
                const double logit = cal.intercepts[t] + dot_coef(pt.coef, z);
                const double p = sigmoid(logit);
                const bool potential = rng.uniform01() < p;
                const bool parent_pos =
                    pt.parent < 0 || out.true_labels[row * n_targets +
                                                     static_cast<std::size_t>(pt.parent)] != 0;
                out.true_labels[row * n_targets + t] =
                    static_cast<std::uint8_t>(potential && parent_pos);
                const double parent_score =
                    pt.parent < 0
                        ? 0.0
                        : out.true_scores[row * n_targets + static_cast<std::size_t>(pt.parent)];
                // chain log-probability; monotone in the true positive rate
                out.true_scores[row * n_targets + t] =
                    parent_score + std::log(std::max(p, 1e-300));
            }
            for (std::size_t t = 0; t < n_targets; ++t) {
                if (!out.true_labels[row * n_targets + t]) continue;
                bool deeper = false;
                for (const std::size_t c : children[t])
                    if (out.true_labels[row * n_targets + c]) deeper = true;
                if (!deeper) rec.icd_codes.push_back(spec.targets[t].code.code);
            }
        }
    }
    return out;
}

void generate(const SynthSpec& spec, const std::filesystem::path& out_path) {
    const SynthCohort cohort = generate_records(spec);
    write_cohort_csv(out_path, cohort.records);
}

double oracle_bayes_auroc(const SynthSpec& spec, std::size_t n, const std::string& target_code,
                          std::optional<std::uint64_t> draw_seed) {
    std::size_t target = spec.targets.size();
    for (std::size_t t = 0; t < spec.targets.size(); ++t)
        if (spec.targets[t].code.code == target_code) target = t;
    if (target == spec.targets.size())
        throw SynthError("oracle_bayes_auroc: unknown target " + target_code);

    SynthSpec draw = spec;
    draw.n_samples = n;
    draw.seed = draw_seed.value_or(mix_seed(spec.seed, "oracle"));
    for (int attempt = 0; attempt < 2; ++attempt) {
        const SynthCohort cohort = generate_records(draw);
        std::vector<double> scores(n);
        std::vector<int> labels(n);
        std::size_t pos = 0;
        for (std::size_t i = 0; i < n; ++i) {
            scores[i] = cohort.score(i, target);
            labels[i] = cohort.label(i, target);
            pos += static_cast<std::size_t>(labels[i] != 0);
        }
        if (pos > 0 && pos < n) return auroc(scores, labels);
        draw.seed = mix_seed(draw.seed, "redraw");
    }
    throw SynthError("oracle_bayes_auroc: degenerate label draw for " + target_code);
}

// ---------------------------------------------------------------------------
// Defaults and JSON
// ---------------------------------------------------------------------------

namespace {

std::array<double, kNumFeatures> coef_map_to_array(const nlohmann::json& j) {
    std::array<double, kNumFeatures> coef{};
    const auto& schema = FeatureSchema::canonical();
    for (const auto& [name, value] : j.items()) {
        const int idx = schema.index_of(name);
        if (idx < 0) throw SynthError("synth spec: unknown feature in coef: " + name);
        coef[static_cast<std::size_t>(idx)] = value.get<double>();
    }
    return coef;
}

nlohmann::json coef_array_to_map(const std::array<double, kNumFeatures>& coef) {
    nlohmann::json j = nlohmann::json::object();
    const auto& schema = FeatureSchema::canonical();
    for (int f = 0; f < kNumFeatures; ++f)
        if (coef[static_cast<std::size_t>(f)] != 0.0)
            j[schema.field(f).name] = coef[static_cast<std::size_t>(f)];
    return j;
}

std::array<double, kNumFeatures> make_coef(
    std::initializer_list<std::pair<const char*, double>> entries) {
    std::array<double, kNumFeatures> coef{};
    const auto& schema = FeatureSchema::canonical();
    for (const auto& [name, v] : entries)
        coef[static_cast<std::size_t>(schema.index_of(name))] = v;
    return coef;
}

// Shared planted disease models: QTc and age dominate, sex and rhythm
// features carry secondary signal.
std::array<double, kNumFeatures> alcoholic_coef() {
    return make_coef({{"qtc_interval", 0.605},
                      {"age", 0.49},
                      {"sex", 0.49},
                      {"rr_interval", -0.22},
                      {"t_axis", -0.167},
                      {"qrs_duration", 0.11}});
}

std::array<double, kNumFeatures> hepatic_coef() {
    return make_coef({{"qtc_interval", 0.57},
                      {"age", 0.52},
                      {"sex", 0.415},
                      {"rr_interval", -0.26},
                      {"p_axis", -0.125},
                      {"pr_interval", -0.085}});
}

void add_default_targets(SynthSpec& spec, const std::array<double, 6>& prevalences) {
    const auto& codes = canonical_targets();
    spec.targets = {
        {codes[0], -1, prevalences[0], alcoholic_coef()},
        {codes[1], 0, prevalences[1], {}},
        {codes[2], 1, prevalences[2], {}},
        {codes[3], -1, prevalences[3], hepatic_coef()},
        {codes[4], 3, prevalences[4], {}},
        {codes[5], 4, prevalences[5], {}},
    };
}

}  // namespace

SynthSpec SynthSpec::internal_default() {
    SynthSpec s;
    s.n_samples = 100000;
    s.seed = 20260801;
    s.id_prefix = "adm";
    s.male_fraction = 0.5149;
    s.ecg = {{{769.0, 264.0},   // rr_interval
              {158.0, 38.0},    // pr_interval
              {94.0, 23.0},     // qrs_duration
              {394.0, 68.0},    // qt_interval
              {447.0, 47.0},    // qtc_interval
              {51.0, 32.0},     // p_axis
              {13.0, 61.0},     // qrs_axis
              {42.0, 58.0}}};   // t_axis
    s.age = {66.0, 25.0};
    s.missing_rate.fill(0.02);
    add_default_targets(s, {0.0221, 0.0150, 0.0100, 0.0120, 0.0090, 0.0067});
    return s;
}

SynthSpec SynthSpec::external_default() {
    SynthSpec s;
    s.n_samples = 100000;
    s.seed = 20260802;
    s.id_prefix = "outp";
    s.male_fraction = 0.5155;
    s.ecg = {{{857.0, 227.0},
              {158.0, 28.0},
              {90.0, 14.0},
              {392.0, 48.0},
              {421.0, 37.0},
              {53.0, 28.0},
              {48.0, 49.0},
              {44.0, 33.0}}};
    s.age = {52.0, 25.0};
    s.missing_rate.fill(0.02);
    add_default_targets(s, {0.0067, 0.0045, 0.0030, 0.0020, 0.0010, 0.0005});
    return s;
}

std::string SynthSpec::to_json() const {
    nlohmann::json j;
    j["n_samples"] = n_samples;
    j["seed"] = seed;
    j["id_prefix"] = id_prefix;
    j["male_fraction"] = male_fraction;
    const auto& schema = FeatureSchema::canonical();
    nlohmann::json marg = nlohmann::json::object();
    for (int f = 0; f < kNumEcgFeatures; ++f)
        marg[schema.field(f).name] = {{"median", ecg[static_cast<std::size_t>(f)].median},
                                      {"iqr", ecg[static_cast<std::size_t>(f)].iqr}};
    marg["age"] = {{"median", age.median}, {"iqr", age.iqr}};
    j["marginals"] = std::move(marg);
    nlohmann::json miss = nlohmann::json::object();
    for (int f = 0; f < kNumEcgFeatures; ++f)
        miss[schema.field(f).name] = missing_rate[static_cast<std::size_t>(f)];
    j["missing_rate"] = std::move(miss);
    nlohmann::json jt = nlohmann::json::array();
    for (const auto& t : targets) {
        nlohmann::json e;
        e["code"] = t.code.code;
        e["description"] = t.code.description;
        if (t.parent >= 0) e["parent"] = targets[static_cast<std::size_t>(t.parent)].code.code;
        e["prevalence"] = t.prevalence;
        e["coef"] = coef_array_to_map(t.coef);
        jt.push_back(std::move(e));
    }
    j["targets"] = std::move(jt);
    return j.dump(1) + "\n";
}

SynthSpec SynthSpec::from_json(const std::string& text) {
    const nlohmann::json j = nlohmann::json::parse(text);
    SynthSpec s;
    s.n_samples = j.at("n_samples").get<std::size_t>();
    s.seed = j.at("seed").get<std::uint64_t>();
    s.id_prefix = j.value("id_prefix", std::string("syn"));
    s.male_fraction = j.at("male_fraction").get<double>();
    const auto& schema = FeatureSchema::canonical();
    const auto& marg = j.at("marginals");
    for (int f = 0; f < kNumEcgFeatures; ++f) {
        const auto& m = marg.at(schema.field(f).name);
        s.ecg[static_cast<std::size_t>(f)] = {m.at("median").get<double>(),
                                              m.at("iqr").get<double>()};
    }
    const auto& am = marg.at("age");
    s.age = {am.at("median").get<double>(), am.at("iqr").get<double>()};
    s.missing_rate.fill(0.0);
    if (j.contains("missing_rate"))
        for (const auto& [name, rate] : j.at("missing_rate").items()) {
            const int idx = schema.index_of(name);
            if (idx < 0 || idx >= kNumEcgFeatures)
                throw SynthError("synth spec: missing_rate names unknown ECG feature: " + name);
            s.missing_rate[static_cast<std::size_t>(idx)] = rate.get<double>();
        }
    for (const auto& e : j.at("targets")) {
        PlantedTarget t;
        t.code.code = e.at("code").get<std::string>();
        t.code.description = e.value("description", std::string());
        if (e.contains("parent") && !e.at("parent").is_null()) {
            const auto parent_code = e.at("parent").get<std::string>();
            t.parent = -1;
            for (std::size_t k = 0; k < s.targets.size(); ++k)
                if (s.targets[k].code.code == parent_code) t.parent = static_cast<int>(k);
            if (t.parent < 0)
                throw SynthError("synth spec: parent must precede child: " + parent_code);
        }
        t.prevalence = e.at("prevalence").get<double>();
        if (e.contains("coef")) t.coef = coef_map_to_array(e.at("coef"));
        s.targets.push_back(std::move(t));
    }
    validate_spec(s);
    return s;
}

SynthSpec SynthSpec::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw SynthError("cannot open synth spec: " + path.string());
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return from_json(text);
}

void SynthSpec::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw SynthError("cannot write synth spec: " + path.string());
    out << to_json();
}

}  // namespace ecgdx
