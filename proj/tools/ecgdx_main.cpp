#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "ecgdx/gbdt.hpp"
#include "ecgdx/hash.hpp"
#include "ecgdx/ingest.hpp"
#include "ecgdx/log.hpp"
#include "ecgdx/metrics.hpp"
#include "ecgdx/pipeline.hpp"
#include "ecgdx/rng.hpp"
#include "ecgdx/shap.hpp"
#include "ecgdx/splits.hpp"
#include "ecgdx/synth.hpp"
#include "ecgdx/version.hpp"

namespace {

using namespace ecgdx;

std::vector<TargetCode> resolve_targets(const std::vector<std::string>& codes) {
    if (codes.empty()) return canonical_targets();
    std::vector<TargetCode> out;
    for (const auto& raw : codes) {
        const std::string code = normalize_icd(raw);
        TargetCode t{code, ""};
        for (const auto& known : canonical_targets())
            if (known.code == code) t.description = known.description;
        out.push_back(std::move(t));
    }
    return out;
}

// Rows used for evaluation / explanation: whole cohort, or one fold role.
std::vector<std::size_t> select_rows(const LabeledCohort& cohort, const std::vector<int>& fold_of,
                                     const FoldPlan& plan, const std::string& which) {
    std::vector<std::size_t> rows;
    if (which == "all") {
        rows.resize(cohort.size());
        for (std::size_t i = 0; i < cohort.size(); ++i) rows[i] = i;
        return rows;
    }
    if (fold_of.empty())
        throw PipelineError("--fold " + which + " requires --folds");
    const FoldSplit roles = split_by_role(fold_of, plan);
    if (which == "test") return roles.test;
    if (which == "val") return roles.val;
    if (which == "train") return roles.train;
    throw PipelineError("unknown fold selector: " + which);
}

int cmd_synth(const std::string& profile, const std::string& spec_path, std::size_t n_override,
              std::optional<std::uint64_t> seed, const std::string& out_path,
              const std::string& emit_spec) {
    SynthSpec spec;
    if (!spec_path.empty()) spec = SynthSpec::load(spec_path);
    else if (profile == "internal") spec = SynthSpec::internal_default();
    else if (profile == "external") spec = SynthSpec::external_default();
    else throw SynthError("unknown synth profile: " + profile);
    if (n_override > 0) spec.n_samples = n_override;
    if (seed.has_value()) spec.seed = *seed;
    if (!emit_spec.empty()) spec.save(emit_spec);
    generate(spec, out_path);
    std::printf("wrote %zu samples to %s\n", spec.n_samples, out_path.c_str());
    return 0;
}

int cmd_ingest(const std::string& in_path, const std::string& tag,
               const std::vector<std::string>& target_codes) {
    const auto targets = resolve_targets(target_codes);
    auto parsed = parse_cohort_path(in_path, tag);
    auto harmonized = harmonize(parsed.records, tag);
    derive_labels(harmonized.cohort, harmonized.codes, targets);
    const auto& cohort = harmonized.cohort;

    std::printf("rows: %zu\n", parsed.total_rows);
    std::printf("accepted: %zu\n", cohort.size());
    std::printf("rejected at parse: %zu\n", parsed.rejected.size());
    std::printf("rejected at harmonize: %zu\n", harmonized.rejected.size());
    std::printf("out-of-range values set missing: %zu\n", harmonized.range_violations_to_missing);
    for (int t = 0; t < cohort.n_targets(); ++t)
        std::printf("prevalence %-6s %.5f\n", cohort.targets[t].code.c_str(),
                    cohort.prevalence(t));
    for (const auto& issue : parsed.rejected)
        log_info("parse row " + std::to_string(issue.row_number) + ": " + issue.reason);
    for (const auto& issue : harmonized.rejected)
        log_info("harmonize row " + std::to_string(issue.row_number) + ": " + issue.reason);
    return 0;
}

int cmd_split(const std::string& in_path, const std::string& out_path, int n_folds,
              std::uint64_t seed, const std::vector<std::string>& target_codes) {
    const auto targets = resolve_targets(target_codes);
    const LabeledCohort cohort = load_cohort(in_path, "internal", targets);
    FoldPlan plan;
    plan.n_folds = n_folds;
    plan.val_fold = n_folds - 2;
    plan.test_fold = n_folds - 1;
    plan.seed = seed;
    const auto fold_of = assign_folds(cohort, plan);
    write_folds_csv(out_path, cohort, fold_of);
    std::printf("wrote fold assignment for %zu samples to %s\n", cohort.size(), out_path.c_str());
    return 0;
}

int cmd_train(const std::string& in_path, const std::string& folds_path,
              const std::string& target_code, const std::string& out_path,
              const std::string& history_path, const TrainParams& params, int n_folds) {
    const auto targets = resolve_targets({target_code});
    const LabeledCohort cohort = load_cohort(in_path, "internal", targets);
    const auto fold_of = read_folds_csv(folds_path, cohort);
    FoldPlan plan;
    plan.n_folds = n_folds;
    plan.val_fold = n_folds - 2;
    plan.test_fold = n_folds - 1;
    const FoldSplit roles = split_by_role(fold_of, plan);

    const FeatureMatrix X_all = to_matrix(cohort);
    const FeatureMatrix X_train = gather_rows(X_all, roles.train);
    const FeatureMatrix X_val = gather_rows(X_all, roles.val);
    std::vector<int> y_train(roles.train.size()), y_val(roles.val.size());
    for (std::size_t i = 0; i < roles.train.size(); ++i) y_train[i] = cohort.label(roles.train[i], 0);
    for (std::size_t i = 0; i < roles.val.size(); ++i) y_val[i] = cohort.label(roles.val[i], 0);

    const TrainResult result = train(X_train, y_train, X_val, y_val, targets[0], params,
                                     cohort.schema.fingerprint());
    save_model(out_path, result.ensemble, targets[0]);
    if (!history_path.empty()) {
        std::ofstream h(history_path, std::ios::binary);
        h << "round,train_loss,val_auroc\n";
        for (const auto& r : result.history)
            h << r.round << ',' << r.train_loss << ',' << r.val_auroc << '\n';
    }
    std::printf("trained %s: %d rounds, best round %d, val AUROC %.4f\n",
                targets[0].code.c_str(), static_cast<int>(result.history.size()),
                result.best_round, result.best_val_auroc);
    return 0;
}

int cmd_eval(const std::string& model_path, const std::string& in_path,
             const std::string& folds_path, const std::string& which, int n_folds,
             const std::string& out_path, const std::string& roc_path, int boot_iters,
             std::uint64_t seed, const std::string& tag) {
    const ModelFile model = load_model(model_path);
    const LabeledCohort cohort = load_cohort(in_path, tag, {model.target});
    if (cohort.schema.fingerprint() != model.ensemble.schema_fingerprint)
        throw PipelineError("schema fingerprint mismatch between model and cohort");

    std::vector<int> fold_of;
    if (!folds_path.empty()) fold_of = read_folds_csv(folds_path, cohort);
    FoldPlan plan;
    plan.n_folds = n_folds;
    plan.val_fold = n_folds - 2;
    plan.test_fold = n_folds - 1;
    const auto rows = select_rows(cohort, fold_of, plan, which);

    const FeatureMatrix X = gather_rows(to_matrix(cohort), rows);
    const auto scores = predict_margins(model.ensemble, X);
    std::vector<int> y(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) y[i] = cohort.label(rows[i], 0);

    const EvalReport report = evaluate(scores, y, model.target, tag, boot_iters, 0.95, seed);
    write_eval_report(out_path, report);
    if (!roc_path.empty()) write_roc_csv(roc_path, report.roc_points);
    std::printf("%s %s AUROC %.4f [%.4f, %.4f] prevalence %.5f (n=%zu)\n",
                model.target.code.c_str(), tag.c_str(), report.auroc, report.interval_95.lo,
                report.interval_95.hi, report.prevalence, rows.size());
    return 0;
}

int cmd_explain(const std::string& model_path, const std::string& in_path,
                const std::string& folds_path, const std::string& which, int n_folds,
                std::size_t max_samples, const std::string& out_path, int jobs) {
    const ModelFile model = load_model(model_path);
    const LabeledCohort cohort = load_cohort(in_path, "internal", {model.target});
    if (cohort.schema.fingerprint() != model.ensemble.schema_fingerprint)
        throw PipelineError("schema fingerprint mismatch between model and cohort");

    std::vector<int> fold_of;
    if (!folds_path.empty()) fold_of = read_folds_csv(folds_path, cohort);
    FoldPlan plan;
    plan.n_folds = n_folds;
    plan.val_fold = n_folds - 2;
    plan.test_fold = n_folds - 1;
    auto rows = select_rows(cohort, fold_of, plan, which);
    if (max_samples > 0 && rows.size() > max_samples) rows.resize(max_samples);

    const FeatureMatrix X = gather_rows(to_matrix(cohort), rows);
    std::vector<std::string> ids;
    ids.reserve(rows.size());
    for (const auto r : rows) ids.push_back(cohort.record_ids[r]);

    const AttributionMatrix attr = attribute_matrix(model.ensemble, X, model.target, jobs);
    write_beeswarm_csv(out_path, attr, X, cohort.schema, ids);

    const ShapSummary summary = shap_summary(attr);
    std::printf("feature ranking for %s (mean |shap|):\n", model.target.code.c_str());
    for (int pos = 0; pos < attr.cols; ++pos) {
        const int f = summary.ranking[static_cast<std::size_t>(pos)];
        std::printf("  %2d. %-13s %.6f\n", pos + 1, cohort.schema.field(f).name.c_str(),
                    summary.mean_abs[static_cast<std::size_t>(f)]);
    }
    return 0;
}

int cmd_run(const std::string& config_path, const std::string& out_dir, int jobs) {
    const PipelineConfig config = PipelineConfig::load(config_path);
    RunManifest manifest;
    const int rc = run_pipeline(config, out_dir, jobs, manifest);
    verify_manifest(manifest, out_dir);
    for (const auto& o : manifest.outcomes) {
        if (o.ok) {
            std::printf("%-6s ok    internal AUROC %.4f", o.target.code.c_str(), o.internal_auroc);
            if (o.has_external) std::printf("  external AUROC %.4f", o.external_auroc);
            std::printf("  (%d rounds, best %d)\n", o.boosting_rounds, o.best_round);
        } else {
            std::printf("%-6s FAILED: %s\n", o.target.code.c_str(), o.error.c_str());
        }
    }
    std::printf("manifest: %s\n", (std::filesystem::path(out_dir) / "manifest.json").c_str());
    return rc;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"ECG-feature disease classification pipeline"};
    app.set_version_flag("--version", std::string(ecgdx::kToolVersion));
    app.fallthrough();  // global flags may follow the subcommand
    std::string log_level = "warn";
    app.add_option("--log-level", log_level, "error|warn|info|debug")->capture_default_str();

    // synth
    auto* synth = app.add_subcommand("synth", "generate a synthetic cohort file");
    std::string synth_profile = "internal", synth_spec, synth_out, synth_emit_spec;
    std::size_t synth_n = 0;
    std::optional<std::uint64_t> synth_seed;
    synth->add_option("--profile", synth_profile, "internal|external")->capture_default_str();
    synth->add_option("--spec", synth_spec, "synth spec JSON (overrides --profile)");
    synth->add_option("--n", synth_n, "sample count override");
    synth->add_option("--seed", synth_seed, "generator seed override");
    synth->add_option("--out", synth_out, "output cohort CSV")->required();
    synth->add_option("--emit-spec", synth_emit_spec, "also write the effective spec JSON");

    // ingest
    auto* ingest = app.add_subcommand("ingest", "parse and validate a cohort file");
    std::string ingest_in, ingest_tag = "internal";
    std::vector<std::string> ingest_targets;
    ingest->add_option("--in", ingest_in, "cohort CSV")->required();
    ingest->add_option("--tag", ingest_tag, "dataset tag")->capture_default_str();
    ingest->add_option("--target", ingest_targets, "target codes (default: canonical six)");

    // split
    auto* split = app.add_subcommand("split", "assign stratified folds");
    std::string split_in, split_out;
    int split_folds = 20;
    std::uint64_t split_seed = 1;
    std::vector<std::string> split_targets;
    split->add_option("--in", split_in, "cohort CSV")->required();
    split->add_option("--out", split_out, "fold assignment CSV")->required();
    split->add_option("--n-folds", split_folds, "fold count")->capture_default_str();
    split->add_option("--seed", split_seed, "stratification seed")->capture_default_str();
    split->add_option("--target", split_targets, "target codes used for stratification");

    // train
    auto* train_cmd = app.add_subcommand("train", "train one target model");
    std::string train_in, train_folds, train_target, train_out, train_history;
    int train_nfolds = 20;
    ecgdx::TrainParams params;
    train_cmd->add_option("--in", train_in, "cohort CSV")->required();
    train_cmd->add_option("--folds", train_folds, "fold assignment CSV")->required();
    train_cmd->add_option("--target", train_target, "target code")->required();
    train_cmd->add_option("--out", train_out, "model JSON")->required();
    train_cmd->add_option("--history", train_history, "per-round history CSV");
    train_cmd->add_option("--n-folds", train_nfolds, "fold count")->capture_default_str();
    train_cmd->add_option("--max-depth", params.max_depth)->capture_default_str();
    train_cmd->add_option("--rounds", params.n_rounds_max)->capture_default_str();
    train_cmd->add_option("--learning-rate", params.learning_rate)->capture_default_str();
    train_cmd->add_option("--l2-reg", params.l2_reg)->capture_default_str();
    train_cmd->add_option("--min-split-gain", params.min_split_gain)->capture_default_str();
    train_cmd->add_option("--min-child-weight", params.min_child_weight)->capture_default_str();
    train_cmd->add_option("--patience", params.patience)->capture_default_str();
    train_cmd->add_option("--seed", params.seed)->capture_default_str();

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "evaluate a model on a cohort");
    std::string eval_model, eval_in, eval_folds, eval_fold = "all", eval_out, eval_roc,
                eval_tag = "internal";
    int eval_nfolds = 20, eval_boot = 1000;
    std::uint64_t eval_seed = 1;
    eval_cmd->add_option("--model", eval_model, "model JSON")->required();
    eval_cmd->add_option("--in", eval_in, "cohort CSV")->required();
    eval_cmd->add_option("--folds", eval_folds, "fold assignment CSV");
    eval_cmd->add_option("--fold", eval_fold, "all|test|val|train")->capture_default_str();
    eval_cmd->add_option("--n-folds", eval_nfolds)->capture_default_str();
    eval_cmd->add_option("--out", eval_out, "eval report JSON")->required();
    eval_cmd->add_option("--roc", eval_roc, "ROC points CSV");
    eval_cmd->add_option("--boot-iters", eval_boot)->capture_default_str();
    eval_cmd->add_option("--seed", eval_seed, "bootstrap seed")->capture_default_str();
    eval_cmd->add_option("--tag", eval_tag, "dataset tag for the report")->capture_default_str();

    // explain
    auto* explain_cmd = app.add_subcommand("explain", "attribution export for a model");
    std::string ex_model, ex_in, ex_folds, ex_fold = "test", ex_out;
    int ex_nfolds = 20, ex_jobs = 1;
    std::size_t ex_max = 0;
    explain_cmd->add_option("--model", ex_model, "model JSON")->required();
    explain_cmd->add_option("--in", ex_in, "cohort CSV")->required();
    explain_cmd->add_option("--folds", ex_folds, "fold assignment CSV");
    explain_cmd->add_option("--fold", ex_fold, "all|test|val|train")->capture_default_str();
    explain_cmd->add_option("--n-folds", ex_nfolds)->capture_default_str();
    explain_cmd->add_option("--max-samples", ex_max, "cap explained sample count (0 = all)");
    explain_cmd->add_option("--out", ex_out, "beeswarm CSV")->required();
    explain_cmd->add_option("--jobs", ex_jobs)->capture_default_str();

    // run
    auto* run_cmd = app.add_subcommand("run", "full multi-target experiment from a config");
    std::string run_config, run_out;
    int run_jobs = 1;
    run_cmd->add_option("--config", run_config, "pipeline config JSON")->required();
    run_cmd->add_option("--out", run_out, "output directory")->required();
    run_cmd->add_option("--jobs", run_jobs, "parallel target workers")->capture_default_str();

    app.require_subcommand(1);
    CLI11_PARSE(app, argc, argv);

    if (!ecgdx::set_log_level(log_level)) {
        std::fprintf(stderr, "unknown log level: %s\n", log_level.c_str());
        return 1;
    }

    try {
        if (synth->parsed())
            return cmd_synth(synth_profile, synth_spec, synth_n, synth_seed, synth_out,
                             synth_emit_spec);
        if (ingest->parsed()) return cmd_ingest(ingest_in, ingest_tag, ingest_targets);
        if (split->parsed())
            return cmd_split(split_in, split_out, split_folds, split_seed, split_targets);
        if (train_cmd->parsed())
            return cmd_train(train_in, train_folds, train_target, train_out, train_history,
                             params, train_nfolds);
        if (eval_cmd->parsed())
            return cmd_eval(eval_model, eval_in, eval_folds, eval_fold, eval_nfolds, eval_out,
                            eval_roc, eval_boot, eval_seed, eval_tag);
        if (explain_cmd->parsed())
            return cmd_explain(ex_model, ex_in, ex_folds, ex_fold, ex_nfolds, ex_max, ex_out,
                               ex_jobs);
        if (run_cmd->parsed()) return cmd_run(run_config, run_out, run_jobs);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 1;
}
