#include "ecgdx/pipeline.hpp"

#include <atomic>
#include <chrono>
#include <fstream>
#include <mutex>
#include <thread>

#include <nlohmann/json.hpp>

#include "ecgdx/hash.hpp"
#include "ecgdx/ingest.hpp"
#include "ecgdx/log.hpp"
#include "ecgdx/metrics.hpp"
#include "ecgdx/rng.hpp"
#include "ecgdx/shap.hpp"
#include "ecgdx/synth.hpp"
#include "ecgdx/version.hpp"

namespace ecgdx {

namespace {

using nlohmann::json;

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::vector<int> labels_for(const LabeledCohort& c, int target, std::span<const std::size_t> rows) {
    std::vector<int> y(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) y[i] = c.label(rows[i], target);
    return y;
}

}  // namespace

std::string PipelineConfig::to_json() const {
    json j;
    j["seed"] = seed;
    j["internal_cohort"] = internal_cohort.string();
    if (external_cohort.has_value()) j["external_cohort"] = external_cohort->string();
    json jt = json::array();
    for (const auto& t : targets)
        jt.push_back({{"code", t.code}, {"description", t.description}});
    j["targets"] = std::move(jt);
    j["train"] = {{"max_depth", train.max_depth},
                  {"n_rounds_max", train.n_rounds_max},
                  {"learning_rate", train.learning_rate},
                  {"l2_reg", train.l2_reg},
                  {"min_split_gain", train.min_split_gain},
                  {"min_child_weight", train.min_child_weight},
                  {"patience", train.patience}};
    j["folds"] = {{"n_folds", folds.n_folds},
                  {"val_fold", folds.val_fold},
                  {"test_fold", folds.test_fold}};
    j["bootstrap"] = {{"iterations", bootstrap_iterations}, {"level", bootstrap_level}};
    j["explain"] = {{"dataset", explain.dataset}, {"max_samples", explain.max_samples}};
    return j.dump(1) + "\n";
}

PipelineConfig PipelineConfig::from_json(const std::string& text) {
    const json j = json::parse(text);
    PipelineConfig c;
    c.seed = j.value("seed", std::uint64_t{1});
    c.internal_cohort = j.at("internal_cohort").get<std::string>();
    if (j.contains("external_cohort") && !j.at("external_cohort").is_null())
        c.external_cohort = std::filesystem::path(j.at("external_cohort").get<std::string>());
    if (j.contains("targets") && !j.at("targets").empty()) {
        c.targets.clear();
        for (const auto& e : j.at("targets"))
            c.targets.push_back(
                {e.at("code").get<std::string>(), e.value("description", std::string())});
    }
    if (j.contains("train")) {
        const auto& t = j.at("train");
        c.train.max_depth = t.value("max_depth", c.train.max_depth);
        c.train.n_rounds_max = t.value("n_rounds_max", c.train.n_rounds_max);
        c.train.learning_rate = t.value("learning_rate", c.train.learning_rate);
        c.train.l2_reg = t.value("l2_reg", c.train.l2_reg);
        c.train.min_split_gain = t.value("min_split_gain", c.train.min_split_gain);
        c.train.min_child_weight = t.value("min_child_weight", c.train.min_child_weight);
        c.train.patience = t.value("patience", c.train.patience);
    }
    if (j.contains("folds")) {
        const auto& f = j.at("folds");
        c.folds.n_folds = f.value("n_folds", c.folds.n_folds);
        c.folds.val_fold = f.value("val_fold", c.folds.val_fold);
        c.folds.test_fold = f.value("test_fold", c.folds.test_fold);
    }
    if (j.contains("bootstrap")) {
        c.bootstrap_iterations = j.at("bootstrap").value("iterations", c.bootstrap_iterations);
        c.bootstrap_level = j.at("bootstrap").value("level", c.bootstrap_level);
    }
    if (j.contains("explain")) {
        c.explain.dataset = j.at("explain").value("dataset", c.explain.dataset);
        c.explain.max_samples = j.at("explain").value("max_samples", c.explain.max_samples);
    }
    return c;
}

PipelineConfig PipelineConfig::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw PipelineError("cannot open config: " + path.string());
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return from_json(text);
}

void PipelineConfig::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw PipelineError("cannot write config: " + path.string());
    out << to_json();
}

namespace {

json artifact_json(const ArtifactRef& a) { return json{{"path", a.path}, {"digest", a.digest}}; }

json outcome_json(const TargetOutcome& o) {
    json j;
    j["target"] = o.target.code;
    j["ok"] = o.ok;
    if (!o.ok) j["error"] = o.error;
    j["boosting_rounds"] = o.boosting_rounds;
    j["best_round"] = o.best_round;
    j["val_auroc"] = o.val_auroc;
    j["internal_auroc"] = o.internal_auroc;
    if (o.has_external) j["external_auroc"] = o.external_auroc;
    json arts = json::array();
    for (const auto& a : o.artifacts) arts.push_back(artifact_json(a));
    j["artifacts"] = std::move(arts);
    j["seconds"] = o.seconds;
    return j;
}

}  // namespace

std::string RunManifest::to_json() const {
    json j;
    j["tool"] = kToolName;
    j["tool_version"] = tool_version;
    j["config_digest"] = config_digest;
    j["seed"] = seed;
    j["internal_cohort"] = internal_cohort;
    if (!external_cohort.empty()) j["external_cohort"] = external_cohort;
    j["internal_samples"] = internal_samples;
    j["external_samples"] = external_samples;
    json shared = json::array();
    for (const auto& a : shared_artifacts) shared.push_back(artifact_json(a));
    j["shared_artifacts"] = std::move(shared);
    json outs = json::array();
    for (const auto& o : outcomes) outs.push_back(outcome_json(o));
    j["targets"] = std::move(outs);
    j["total_seconds"] = total_seconds;
    return j.dump(1) + "\n";
}

int run_pipeline(const PipelineConfig& config, const std::filesystem::path& out_dir, int jobs,
                 RunManifest& manifest) {
    const auto t_start = std::chrono::steady_clock::now();
    if (config.targets.empty()) throw PipelineError("config names no targets");
    std::filesystem::create_directories(out_dir);

    manifest = RunManifest{};
    manifest.tool_version = kToolVersion;
    manifest.config_digest = to_hex16(fnv1a64(config.to_json()));
    manifest.seed = config.seed;
    manifest.internal_cohort = config.internal_cohort.string();

    // --- ingest ---
    const LabeledCohort internal = load_cohort(config.internal_cohort, "internal", config.targets);
    if (internal.size() == 0) throw PipelineError("internal cohort is empty after ingestion");
    manifest.internal_samples = internal.size();

    LabeledCohort external;
    bool has_external = false;
    if (config.external_cohort.has_value()) {
        external = load_cohort(*config.external_cohort, "external", config.targets);
        has_external = true;
        manifest.external_cohort = config.external_cohort->string();
        manifest.external_samples = external.size();
    }

    // --- folds ---
    FoldPlan plan = config.folds;
    plan.seed = mix_seed(config.seed, "folds");
    const std::vector<int> fold_of = assign_folds(internal, plan);
    const auto folds_path = out_dir / "folds.csv";
    write_folds_csv(folds_path, internal, fold_of);
    manifest.shared_artifacts.push_back({"folds.csv", file_digest(folds_path)});

    const FoldSplit roles = split_by_role(fold_of, plan);
    const FeatureMatrix X_all = to_matrix(internal);
    const FeatureMatrix X_train = gather_rows(X_all, roles.train);
    const FeatureMatrix X_val = gather_rows(X_all, roles.val);
    const FeatureMatrix X_test = gather_rows(X_all, roles.test);
    const FeatureMatrix X_ext = has_external ? to_matrix(external) : FeatureMatrix{};

    // explain rows come from the internal cohort per config
    std::vector<std::size_t> explain_rows;
    if (config.explain.dataset == "test") explain_rows = roles.test;
    else if (config.explain.dataset == "val") explain_rows = roles.val;
    else if (config.explain.dataset == "train") explain_rows = roles.train;
    else if (config.explain.dataset == "all") {
        explain_rows.resize(internal.size());
        for (std::size_t i = 0; i < internal.size(); ++i) explain_rows[i] = i;
    } else {
        throw PipelineError("explain.dataset must be one of test/val/train/all");
    }
    if (config.explain.max_samples > 0 && explain_rows.size() > config.explain.max_samples)
        explain_rows.resize(config.explain.max_samples);
    const FeatureMatrix X_explain = gather_rows(X_all, explain_rows);
    std::vector<std::string> explain_ids;
    explain_ids.reserve(explain_rows.size());
    for (const auto r : explain_rows) explain_ids.push_back(internal.record_ids[r]);

    const std::uint64_t fingerprint = internal.schema.fingerprint();
    manifest.outcomes.assign(config.targets.size(), {});

    std::atomic<std::size_t> next{0};
    auto run_target = [&](std::size_t t) {
        const auto t0 = std::chrono::steady_clock::now();
        TargetOutcome& out = manifest.outcomes[t];
        out.target = config.targets[t];
        const std::string& code = out.target.code;
        const auto target_dir = out_dir / "targets" / code;
        try {
            std::filesystem::create_directories(target_dir);
            const int ti = static_cast<int>(t);

            TrainParams params = config.train;
            params.seed = mix_seed(config.seed, "train-" + code);
            const auto y_train = labels_for(internal, ti, roles.train);
            const auto y_val = labels_for(internal, ti, roles.val);
            TrainResult trained =
                train(X_train, y_train, X_val, y_val, out.target, params, fingerprint);
            out.boosting_rounds = static_cast<int>(trained.history.size());
            out.best_round = trained.best_round;
            out.val_auroc = trained.best_val_auroc;

            const auto model_path = target_dir / "model.json";
            save_model(model_path, trained.ensemble, out.target);
            out.artifacts.push_back({"targets/" + code + "/model.json", file_digest(model_path)});

            // internal test fold
            {
                const auto scores = predict_margins(trained.ensemble, X_test);
                const auto y_test = labels_for(internal, ti, roles.test);
                const EvalReport report =
                    evaluate(scores, y_test, out.target, "internal", config.bootstrap_iterations,
                             config.bootstrap_level, mix_seed(config.seed, "boot-internal-" + code));
                out.internal_auroc = report.auroc;
                const auto report_path = target_dir / "eval_internal.json";
                write_eval_report(report_path, report);
                out.artifacts.push_back(
                    {"targets/" + code + "/eval_internal.json", file_digest(report_path)});
                const auto roc_path = target_dir / "roc_internal.csv";
                write_roc_csv(roc_path, report.roc_points);
                out.artifacts.push_back(
                    {"targets/" + code + "/roc_internal.csv", file_digest(roc_path)});
            }

            // external validation on the full external cohort
            if (has_external) {
                const auto scores = predict_margins(trained.ensemble, X_ext);
                std::vector<std::size_t> all_rows(external.size());
                for (std::size_t i = 0; i < external.size(); ++i) all_rows[i] = i;
                const auto y_ext = labels_for(external, ti, all_rows);
                const EvalReport report =
                    evaluate(scores, y_ext, out.target, "external", config.bootstrap_iterations,
                             config.bootstrap_level, mix_seed(config.seed, "boot-external-" + code));
                out.external_auroc = report.auroc;
                out.has_external = true;
                const auto report_path = target_dir / "eval_external.json";
                write_eval_report(report_path, report);
                out.artifacts.push_back(
                    {"targets/" + code + "/eval_external.json", file_digest(report_path)});
                const auto roc_path = target_dir / "roc_external.csv";
                write_roc_csv(roc_path, report.roc_points);
                out.artifacts.push_back(
                    {"targets/" + code + "/roc_external.csv", file_digest(roc_path)});
            }

            // explainability export
            {
                const AttributionMatrix attr =
                    attribute_matrix(trained.ensemble, X_explain, out.target, 1);
                const auto bees_path = target_dir / "beeswarm.csv";
                write_beeswarm_csv(bees_path, attr, X_explain, internal.schema, explain_ids);
                out.artifacts.push_back(
                    {"targets/" + code + "/beeswarm.csv", file_digest(bees_path)});
            }

            out.ok = true;
        } catch (const std::exception& e) {
            out.ok = false;
            out.error = e.what();
            log_error("target " + code + " failed: " + out.error);
        }
        out.seconds = seconds_since(t0);
    };

    const int n_workers =
        std::max(1, std::min<int>(jobs, static_cast<int>(config.targets.size())));
    if (n_workers == 1) {
        for (std::size_t t = 0; t < config.targets.size(); ++t) run_target(t);
    } else {
        std::vector<std::thread> workers;
        workers.reserve(static_cast<std::size_t>(n_workers));
        for (int w = 0; w < n_workers; ++w)
            workers.emplace_back([&] {
                for (;;) {
                    const std::size_t t = next.fetch_add(1);
                    if (t >= config.targets.size()) return;
                    run_target(t);
                }
            });
        for (auto& w : workers) w.join();
    }

    manifest.total_seconds = seconds_since(t_start);
    std::ofstream out(out_dir / "manifest.json", std::ios::binary);
    if (!out) throw PipelineError("cannot write manifest");
    out << manifest.to_json();

    bool all_ok = true;
    for (const auto& o : manifest.outcomes) all_ok = all_ok && o.ok;
    return all_ok ? 0 : 2;
}

void verify_manifest(const RunManifest& manifest, const std::filesystem::path& out_dir) {
    auto check = [&](const ArtifactRef& a) {
        const auto path = out_dir / a.path;
        if (!std::filesystem::exists(path))
            throw PipelineError("manifest references missing artifact: " + a.path);
        if (file_digest(path) != a.digest)
            throw PipelineError("artifact digest mismatch: " + a.path);
    };
    for (const auto& a : manifest.shared_artifacts) check(a);
    for (const auto& o : manifest.outcomes)
        for (const auto& a : o.artifacts) check(a);
}

}  // namespace ecgdx
