#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "ecgdx/gbdt.hpp"
#include "ecgdx/ingest.hpp"
#include "ecgdx/synth.hpp"

using namespace ecgdx;

namespace {

double median_of(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double iqr_of(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    auto q = [&](double p) {
        const double pos = p * static_cast<double>(v.size() - 1);
        const std::size_t lo = static_cast<std::size_t>(pos);
        if (lo + 1 >= v.size()) return v.back();
        return v[lo] + (v[lo + 1] - v[lo]) * (pos - static_cast<double>(lo));
    };
    return q(0.75) - q(0.25);
}

std::vector<double> feature_values(const SynthCohort& c, int ecg_index) {
    std::vector<double> out;
    for (const auto& r : c.records)
        if (const auto& v = r.ecg[static_cast<std::size_t>(ecg_index)]; v.has_value())
            out.push_back(*v);
    return out;
}

}  // namespace

TEST_CASE("marginals hit their medians and IQRs at moderate n") {
    SynthSpec spec = SynthSpec::internal_default();
    spec.n_samples = 20000;
    const auto cohort = generate_records(spec);
    for (int f = 0; f < kNumEcgFeatures; ++f) {
        const auto values = feature_values(cohort, f);
        const auto& m = spec.ecg[static_cast<std::size_t>(f)];
        // generous unit-test tolerances; the acceptance suite pins the tight ones
        CHECK(std::abs(median_of(values) - m.median) <= 0.04 * std::max(std::abs(m.median), 10.0));
        CHECK(std::abs(iqr_of(values) - m.iqr) <= 0.10 * m.iqr);
    }
    std::vector<double> ages;
    for (const auto& r : cohort.records) ages.push_back(r.age);
    CHECK(std::abs(median_of(ages) - spec.age.median) <= 0.03 * spec.age.median);
}

TEST_CASE("sex ratio and missingness follow the spec") {
    SynthSpec spec = SynthSpec::internal_default();
    spec.n_samples = 20000;
    const auto cohort = generate_records(spec);
    std::size_t male = 0, missing_rr = 0;
    for (const auto& r : cohort.records) {
        male += r.sex_token == "M";
        missing_rr += !r.ecg[0].has_value();
    }
    const double n = static_cast<double>(spec.n_samples);
    // 3 standard errors around the Bernoulli means
    CHECK(std::abs(male / n - spec.male_fraction) <= 3.0 * std::sqrt(0.25 / n));
    CHECK(std::abs(missing_rr / n - spec.missing_rate[0]) <=
          3.0 * std::sqrt(spec.missing_rate[0] / n) + 1e-3);
}

TEST_CASE("zero planted coefficients realize sigmoid(intercept) prevalence") {
    SynthSpec spec = SynthSpec::internal_default();
    spec.n_samples = 40000;
    spec.targets.resize(1);
    spec.targets[0].coef = {};  // no feature effects
    spec.targets[0].prevalence = 0.05;
    const auto cal = calibrate(spec);
    // with no covariate effect the solved intercept is the plain logit
    CHECK(sigmoid(cal.intercepts[0]) == doctest::Approx(0.05).epsilon(1e-3));

    const auto cohort = generate_records(spec);
    std::size_t pos = 0;
    for (std::size_t i = 0; i < spec.n_samples; ++i) pos += cohort.label(i, 0);
    const double n = static_cast<double>(spec.n_samples);
    const double se = std::sqrt(0.05 * 0.95 / n);
    CHECK(std::abs(pos / n - 0.05) <= 3.0 * se);
}

TEST_CASE("realized prevalences track the spec for every default target") {
    SynthSpec spec = SynthSpec::internal_default();
    spec.n_samples = 50000;
    const auto cohort = generate_records(spec);
    for (std::size_t t = 0; t < spec.targets.size(); ++t) {
        std::size_t pos = 0;
        for (std::size_t i = 0; i < spec.n_samples; ++i) pos += cohort.label(i, t);
        const double want = spec.targets[t].prevalence;
        const double got = static_cast<double>(pos) / static_cast<double>(spec.n_samples);
        const double se = std::sqrt(want * (1.0 - want) / static_cast<double>(spec.n_samples));
        CHECK(std::abs(got - want) <= 4.0 * se);
    }
}

TEST_CASE("generated labels are hierarchy-consistent and match derived labels") {
    SynthSpec spec = SynthSpec::internal_default();
    spec.n_samples = 5000;
    const auto cohort = generate_records(spec);

    std::ostringstream csv;
    write_cohort_csv(csv, cohort.records);
    std::istringstream in(csv.str());
    const auto parsed = parse_cohort_file(in, "internal");
    REQUIRE(parsed.records.size() == spec.n_samples);
    auto h = harmonize(parsed.records, "internal");
    REQUIRE(h.cohort.size() == spec.n_samples);
    derive_labels(h.cohort, h.codes, canonical_targets());
    CHECK(labels_hierarchy_consistent(h.cohort));

    // the deepest-positive-code emission reproduces the generator's labels
    for (std::size_t i = 0; i < spec.n_samples; ++i)
        for (int t = 0; t < 6; ++t)
            CHECK(h.cohort.label(i, t) == cohort.label(i, static_cast<std::size_t>(t)));
}

TEST_CASE("generation is deterministic and seed-sensitive") {
    SynthSpec spec = SynthSpec::internal_default();
    spec.n_samples = 3000;
    std::ostringstream a, b;
    write_cohort_csv(a, generate_records(spec).records);
    write_cohort_csv(b, generate_records(spec).records);
    CHECK(a.str() == b.str());

    spec.seed += 1;
    std::ostringstream c;
    write_cohort_csv(c, generate_records(spec).records);
    CHECK(a.str() != c.str());
}

TEST_CASE("infeasible hierarchy specs are rejected") {
    SynthSpec spec = SynthSpec::internal_default();
    spec.targets[1].prevalence = spec.targets[0].prevalence * 2.0;  // child above parent
    CHECK_THROWS_AS(calibrate(spec), SynthError);
    CHECK_THROWS_AS(generate_records(spec), SynthError);
}

TEST_CASE("spec validation catches bad fields") {
    SynthSpec spec = SynthSpec::internal_default();
    spec.ecg[2].iqr = 0.0;
    CHECK_THROWS_AS(calibrate(spec), SynthError);

    spec = SynthSpec::internal_default();
    spec.missing_rate[0] = 1.0;
    CHECK_THROWS_AS(calibrate(spec), SynthError);

    spec = SynthSpec::internal_default();
    std::swap(spec.targets[0], spec.targets[1]);  // child now precedes parent
    CHECK_THROWS_AS(calibrate(spec), SynthError);
}

TEST_CASE("oracle AUROC: no signal is chance, extreme signal is near-perfect") {
    SynthSpec spec = SynthSpec::internal_default();
    spec.targets.resize(1);
    spec.targets[0].coef = {};
    spec.targets[0].prevalence = 0.05;
    CHECK(oracle_bayes_auroc(spec, 20000, "K70") == doctest::Approx(0.5).epsilon(0.03));

    spec.targets[0].coef[4] = 20.0;  // overwhelming qtc effect
    CHECK(oracle_bayes_auroc(spec, 20000, "K70") >= 0.99);
}

TEST_CASE("default planted models sit in the intended oracle band") {
    const SynthSpec spec = SynthSpec::internal_default();
    const double k70 = oracle_bayes_auroc(spec, 60000, "K70");
    CHECK(k70 >= 0.83);
    CHECK(k70 <= 0.87);
    const double k72 = oracle_bayes_auroc(spec, 60000, "K72");
    CHECK(k72 >= 0.80);
    CHECK(k72 <= 0.90);
}

TEST_CASE("spec JSON round-trips") {
    const SynthSpec spec = SynthSpec::internal_default();
    const auto text = spec.to_json();
    const SynthSpec back = SynthSpec::from_json(text);
    CHECK(back.to_json() == text);
    CHECK(back.n_samples == spec.n_samples);
    CHECK(back.targets.size() == spec.targets.size());
    CHECK(back.targets[2].parent == 1);
    CHECK(back.ecg[4].median == spec.ecg[4].median);
}

TEST_CASE("oracle errors on unknown targets") {
    const SynthSpec spec = SynthSpec::internal_default();
    CHECK_THROWS_AS(oracle_bayes_auroc(spec, 1000, "Z99"), SynthError);
}
