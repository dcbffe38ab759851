#include "iconq/cli.hpp"

#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "iconq/experiment.hpp"
#include "iconq/function_model.hpp"
#include "iconq/json_io.hpp"
#include "iconq/metrics.hpp"
#include "iconq/replay.hpp"
#include "json.hpp"

namespace iconq {

namespace {

void write_text(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open for writing: " + path);
    f << text;
    if (!f) throw DataError("write failed: " + path);
}

std::string ckpt_kind(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open checkpoint: " + path);
    nlohmann::json j = nlohmann::json::parse(f);
    if (!j.contains("kind") || !j["kind"].is_string())
        throw DataError("checkpoint has no kind field: " + path);
    return j["kind"].get<std::string>();
}

PoolConfig load_pool_config(const std::string& path) {
    KvConfig kv = KvConfig::parse_file(path);
    PoolConfig cfg = PoolConfig::from_kv(kv);
    kv.validate();
    cfg.check();
    return cfg;
}

ArrivalConfig load_arrival_config(const std::string& path) {
    KvConfig kv = KvConfig::parse_file(path);
    ArrivalConfig cfg = ArrivalConfig::from_kv(kv);
    kv.validate();
    cfg.check();
    return cfg;
}

OracleParams load_oracle_params(const std::string& path) {
    KvConfig kv = KvConfig::parse_file(path);
    OracleParams p = OracleParams::from_kv(kv);
    kv.validate();
    p.check();
    return p;
}

SchedulerConfig load_scheduler_config(const std::string& path) {
    if (path.empty()) return SchedulerConfig{};
    KvConfig kv = KvConfig::parse_file(path);
    SchedulerConfig cfg = SchedulerConfig::from_kv(kv);
    kv.validate();
    cfg.check();
    return cfg;
}

// A freshly trained stage model embedded into every learned bundle.
StageModel train_stage_for(const std::vector<ExecutedRecord>& trace, const QueryPool& pool) {
    return StageModel::train(trace, pool);
}

FeatureCache cache_for(const FeatureConfig& fc, const StageModel& stage) {
    return FeatureCache(fc, stage.catalog(),
                        [&stage](const Query& q) { return stage.predict_avg(q); });
}

double max_est_rows(const Query& q) {
    double rows = 0.0;
    for (const PlanOperator& op : q.operators) rows = std::max(rows, op.est_rows);
    return rows;
}

struct SimRunArgs {
    std::string pool_file;
    std::string arrivals_file;
    std::string policy;
    std::string oracle_file;
    std::string predictor_file;
    std::string scheduler_file;
    std::string out_file;
    std::string decision_log_file;
    double pgm_scale = 5.0e6;
    std::int64_t mpl = 0;  // 0: use the oracle's native mpl
};

void cmd_sim_run(const SimRunArgs& a) {
    const QueryPool pool = read_pool(a.pool_file);
    const std::vector<ArrivalEvent> arrivals = read_arrivals(a.arrivals_file);
    const OracleParams oracle = load_oracle_params(a.oracle_file);

    std::vector<ExecutedRecord> trace;
    if (a.policy == "native") {
        if (!a.predictor_file.empty())
            throw ConfigError("sim run: policy native takes no --predictor");
        if (!a.decision_log_file.empty())
            throw ConfigError("sim run: only policy iconq writes a decision log");
        NativeFifoPolicy policy;
        trace = simulate(pool, arrivals, policy, oracle);
    } else if (a.policy == "iconq") {
        if (a.predictor_file.empty())
            throw ConfigError("sim run: policy iconq requires --predictor");
        const SchedulerConfig cfg = load_scheduler_config(a.scheduler_file);
        const std::string kind = ckpt_kind(a.predictor_file);
        std::optional<IconqBundle> ib;
        std::optional<FunctionBundle> fb;
        std::optional<IconqPredictor> ip;
        std::optional<FunctionPredictor> fp;
        ConcurrentRuntimePredictor* predictor = nullptr;
        const StageModel* stage = nullptr;
        if (kind == "iconq") {
            ib = IconqBundle::load(a.predictor_file);
            ip.emplace(*ib);
            predictor = &*ip;
            stage = &ib->stage;
        } else if (kind == "function") {
            fb = FunctionBundle::load(a.predictor_file);
            fp.emplace(*fb);
            predictor = &*fp;
            stage = &fb->stage;
        } else {
            throw ConfigError("sim run: policy iconq needs an iconq or function checkpoint, got "
                              "kind '" + kind + "'");
        }
        IconqSchedPolicy policy(cfg, *predictor, *stage);
        trace = simulate(pool, arrivals, policy, oracle);
        if (!a.decision_log_file.empty())
            write_text(a.decision_log_file, decision_log_to_jsonl(policy.decisions()));
    } else if (a.policy == "pgm") {
        if (!a.predictor_file.empty())
            throw ConfigError("sim run: policy pgm takes no --predictor");
        if (!a.decision_log_file.empty())
            throw ConfigError("sim run: only policy iconq writes a decision log");
        if (!(a.pgm_scale > 0.0)) throw ConfigError("sim run: --pgm-scale must be > 0");
        PgmPolicy policy(
            [scale = a.pgm_scale](const Query& q) { return max_est_rows(q) / scale; },
            oracle.mem_capacity);
        trace = simulate(pool, arrivals, policy, oracle);
    } else if (a.policy == "qshuffler") {
        if (a.predictor_file.empty())
            throw ConfigError("sim run: policy qshuffler requires --predictor");
        if (!a.decision_log_file.empty())
            throw ConfigError("sim run: only policy iconq writes a decision log");
        const std::string kind = ckpt_kind(a.predictor_file);
        if (kind != "qshuffler")
            throw ConfigError("sim run: policy qshuffler needs a qshuffler checkpoint, got "
                              "kind '" + kind + "'");
        const QshufflerBundle bundle = QshufflerBundle::load(a.predictor_file);
        FeatureCache cache = cache_for(bundle.feature, bundle.stage);
        const std::int64_t mpl = a.mpl > 0 ? a.mpl : oracle.mpl;
        QshufflerPolicy policy(bundle.model, cache, mpl);
        trace = simulate(pool, arrivals, policy, oracle);
    } else {
        throw ConfigError("sim run: unknown policy '" + a.policy +
                          "' (native, iconq, pgm, qshuffler)");
    }
    write_trace(trace, a.out_file);
}

struct TrainArgs {
    std::string trace_file;
    std::string pool_file;
    std::string hp_file;
    std::string out_file;
};

void cmd_train(const std::string& which, const TrainArgs& a) {
    const std::vector<ExecutedRecord> trace = read_trace(a.trace_file);
    const QueryPool pool = read_pool(a.pool_file);
    const bool has_hp = !a.hp_file.empty();

    if (which == "stage") {
        StageHp hp;
        if (has_hp) {
            KvConfig kv = KvConfig::parse_file(a.hp_file);
            hp = StageHp::from_kv(kv);
            kv.validate();
        }
        hp.check();
        StageModel::train(trace, pool, hp).save(a.out_file);
    } else if (which == "iconq") {
        IconqHp hp;
        if (has_hp) {
            KvConfig kv = KvConfig::parse_file(a.hp_file);
            hp = IconqHp::from_kv(kv);
            kv.validate();
        }
        hp.check();
        const StageModel stage = train_stage_for(trace, pool);
        const FeatureConfig fc = stage.feature_config();
        FeatureCache cache = cache_for(fc, stage);
        const std::vector<TrainSample> samples = build_training_set(trace, pool, cache);
        IconqModel model = IconqModel::train(samples, fc, hp);
        IconqBundle{fc, stage, std::move(model)}.save(a.out_file);
    } else if (which == "function") {
        if (has_hp)
            throw ConfigError("train function: the closed-form fit has no --hp parameters");
        const StageModel stage = train_stage_for(trace, pool);
        FunctionSystem sys;
        const auto training = build_function_training(trace, pool, stage, sys);
        const FunctionFit fit = fit_function_params(training, 1);
        FunctionBundle{stage, fit.params, sys}.save(a.out_file);
    } else {  // qshuffler
        QshufflerHp hp;
        if (has_hp) {
            KvConfig kv = KvConfig::parse_file(a.hp_file);
            hp = QshufflerHp::from_kv(kv);
            kv.validate();
        }
        hp.check();
        const StageModel stage = train_stage_for(trace, pool);
        const FeatureConfig fc = stage.feature_config();
        FeatureCache cache = cache_for(fc, stage);
        QshufflerModel model = QshufflerModel::train(trace, pool, cache, hp);
        QshufflerBundle{fc, stage, std::move(model)}.save(a.out_file);
    }
}

struct EvalPredictorArgs {
    std::string model_file;
    std::string trace_file;
    std::string pool_file;
    std::string out_file;
};

void cmd_eval_predictor(const EvalPredictorArgs& a) {
    const std::vector<ExecutedRecord> trace = read_trace(a.trace_file);
    const QueryPool pool = read_pool(a.pool_file);
    const std::vector<ConcurrencyWindow> windows = derive_windows(trace);
    std::vector<double> truths;
    truths.reserve(trace.size());
    for (const ExecutedRecord& r : trace) truths.push_back(r.system_runtime);

    const std::string kind = ckpt_kind(a.model_file);
    std::vector<double> preds;
    preds.reserve(trace.size());
    if (kind == "stage") {
        const StageModel stage = StageModel::load(a.model_file);
        for (const ExecutedRecord& r : trace) preds.push_back(stage.predict_avg(pool.by_id(r.query_id)));
    } else if (kind == "iconq") {
        const IconqBundle bundle = IconqBundle::load(a.model_file);
        IconqPredictor predictor(bundle);
        for (const ConcurrencyWindow& w : windows)
            preds.push_back(window_prediction(predictor, trace, w, pool));
    } else if (kind == "function") {
        const FunctionBundle bundle = FunctionBundle::load(a.model_file);
        FunctionPredictor predictor(bundle);
        for (const ConcurrencyWindow& w : windows)
            preds.push_back(window_prediction(predictor, trace, w, pool));
    } else if (kind == "qshuffler") {
        const QshufflerBundle bundle = QshufflerBundle::load(a.model_file);
        FeatureCache cache = cache_for(bundle.feature, bundle.stage);
        for (const ConcurrencyWindow& w : windows)
            preds.push_back(qshuffler_prediction(bundle, cache, trace, w, pool));
    } else {
        throw ConfigError("eval predictor: unknown checkpoint kind '" + kind + "'");
    }
    const ErrorSummary errors = prediction_errors(preds, truths);
    write_text(a.out_file, prediction_report_csv({kind}, {errors}));
}

struct ReplayMatchArgs {
    std::string targets_file;
    std::string pool_file;
    std::string stage_file;
    std::string iconq_file;
    std::string out_file;
    double tol = 0.2;
    int max_iters = 100;
};

void cmd_eval_replay_match(const ReplayMatchArgs& a) {
    const std::vector<ReplayTarget> targets = read_targets(a.targets_file);
    const QueryPool pool = read_pool(a.pool_file);
    if (ckpt_kind(a.stage_file) != "stage")
        throw ConfigError("eval replay-match: --stage must be a stage checkpoint");
    if (ckpt_kind(a.iconq_file) != "iconq")
        throw ConfigError("eval replay-match: --iconq must be an iconq checkpoint");
    const StageModel stage = StageModel::load(a.stage_file);
    const IconqBundle bundle = IconqBundle::load(a.iconq_file);
    IconqPredictor predictor(bundle);
    const MatchedTrace m = replay_match(targets, pool, predictor, stage, a.tol, a.max_iters);
    write_matched(m, a.out_file);
    std::cout << "matched_fraction=" << format_double(m.matched_fraction)
              << " iterations=" << m.iterations << "\n";
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
    CLI::App app{"Concurrency-aware query scheduling laboratory"};
    app.require_subcommand(1);

    // gen pool / gen arrivals
    auto* gen = app.add_subcommand("gen", "Generate workload inputs");
    gen->require_subcommand(1);

    std::string gp_config, gp_out;
    std::int64_t gp_seed = 1;
    auto* gen_pool = gen->add_subcommand("pool", "Generate a query pool");
    gen_pool->add_option("--config", gp_config, "Pool config file")->required();
    gen_pool->add_option("--seed", gp_seed, "RNG seed")->required();
    gen_pool->add_option("-o", gp_out, "Output pool JSON")->required();
    gen_pool->callback([&] {
        const PoolConfig cfg = load_pool_config(gp_config);
        write_pool(generate_pool(cfg, static_cast<std::uint64_t>(gp_seed)), gp_out);
    });

    std::string ga_pool, ga_config, ga_out;
    std::int64_t ga_seed = 1;
    auto* gen_arrivals = gen->add_subcommand("arrivals", "Generate an arrival list");
    gen_arrivals->add_option("--pool", ga_pool, "Pool JSON")->required();
    gen_arrivals->add_option("--config", ga_config, "Arrival config file")->required();
    gen_arrivals->add_option("--seed", ga_seed, "RNG seed")->required();
    gen_arrivals->add_option("-o", ga_out, "Output arrivals JSONL")->required();
    gen_arrivals->callback([&] {
        const QueryPool pool = read_pool(ga_pool);
        const ArrivalConfig cfg = load_arrival_config(ga_config);
        write_arrivals(generate_arrivals(pool, cfg, static_cast<std::uint64_t>(ga_seed)), ga_out);
    });

    // sim run / sim closed-loop
    auto* sim = app.add_subcommand("sim", "Run the execution simulator");
    sim->require_subcommand(1);

    SimRunArgs sr;
    auto* sim_run = sim->add_subcommand("run", "Replay arrivals under a policy");
    sim_run->add_option("--pool", sr.pool_file, "Pool JSON")->required();
    sim_run->add_option("--arrivals", sr.arrivals_file, "Arrivals JSONL")->required();
    sim_run->add_option("--policy", sr.policy, "native|iconq|pgm|qshuffler")->required();
    sim_run->add_option("--oracle", sr.oracle_file, "Engine parameter file")->required();
    sim_run->add_option("--predictor", sr.predictor_file, "Predictor checkpoint");
    sim_run->add_option("--scheduler", sr.scheduler_file, "Scheduler config file");
    sim_run->add_option("--pgm-scale", sr.pgm_scale, "Rows per memory-capacity unit");
    sim_run->add_option("--mpl", sr.mpl, "Qshuffler cap (0: engine default)");
    sim_run->add_option("-o", sr.out_file, "Output trace JSONL")->required();
    sim_run->add_option("--decision-log", sr.decision_log_file, "Decision log JSONL");
    sim_run->callback([&] { cmd_sim_run(sr); });

    std::string scl_pool, scl_out, scl_oracle;
    std::int64_t scl_clients = 0, scl_seed = 1;
    double scl_hours = 0.0;
    auto* sim_cl = sim->add_subcommand("closed-loop", "Closed-loop clients on the engine");
    sim_cl->add_option("--pool", scl_pool, "Pool JSON")->required();
    sim_cl->add_option("--clients", scl_clients, "Client count")->required();
    sim_cl->add_option("--hours", scl_hours, "Duration in hours")->required();
    sim_cl->add_option("--seed", scl_seed, "RNG seed")->required();
    sim_cl->add_option("--oracle", scl_oracle, "Engine parameter file");
    sim_cl->add_option("-o", scl_out, "Output trace JSONL")->required();
    sim_cl->callback([&] {
        if (scl_clients < 1) throw ConfigError("sim closed-loop: --clients must be >= 1");
        if (!(scl_hours > 0.0)) throw ConfigError("sim closed-loop: --hours must be > 0");
        const QueryPool pool = read_pool(scl_pool);
        const OracleParams oracle =
            scl_oracle.empty() ? OracleParams{} : load_oracle_params(scl_oracle);
        write_trace(run_closed_loop(pool, static_cast<int>(scl_clients), scl_hours * 3600.0,
                                    oracle, static_cast<std::uint64_t>(scl_seed)),
                    scl_out);
    });

    // train stage|iconq|function|qshuffler
    auto* train = app.add_subcommand("train", "Fit a predictor checkpoint");
    train->require_subcommand(1);
    TrainArgs ta;
    for (const std::string which : {"stage", "iconq", "function", "qshuffler"}) {
        auto* t = train->add_subcommand(which, "Train the " + which + " predictor");
        t->add_option("--trace", ta.trace_file, "Executed trace JSONL")->required();
        t->add_option("--pool", ta.pool_file, "Pool JSON")->required();
        t->add_option("--hp", ta.hp_file, "Hyperparameter file");
        t->add_option("-o", ta.out_file, "Output checkpoint")->required();
        t->callback([&ta, which] { cmd_train(which, ta); });
    }

    // eval predictor / eval replay-match
    auto* eval = app.add_subcommand("eval", "Evaluate predictors and replays");
    eval->require_subcommand(1);

    EvalPredictorArgs ep;
    auto* eval_pred = eval->add_subcommand("predictor", "Prediction accuracy on a trace");
    eval_pred->add_option("--model", ep.model_file, "Predictor checkpoint")->required();
    eval_pred->add_option("--trace", ep.trace_file, "Executed trace JSONL")->required();
    eval_pred->add_option("--pool", ep.pool_file, "Pool JSON")->required();
    eval_pred->add_option("-o", ep.out_file, "Output metrics CSV")->required();
    eval_pred->callback([&] { cmd_eval_predictor(ep); });

    ReplayMatchArgs rm;
    auto* eval_rm = eval->add_subcommand("replay-match", "Fit a trace to target runtimes");
    eval_rm->add_option("--targets", rm.targets_file, "Target list JSONL")->required();
    eval_rm->add_option("--pool", rm.pool_file, "Pool JSON")->required();
    eval_rm->add_option("--stage", rm.stage_file, "Stage checkpoint")->required();
    eval_rm->add_option("--iconq", rm.iconq_file, "Iconq checkpoint")->required();
    eval_rm->add_option("--tol", rm.tol, "Relative match tolerance");
    eval_rm->add_option("--max-iters", rm.max_iters, "Refinement pass limit");
    eval_rm->add_option("-o", rm.out_file, "Output matched JSONL")->required();
    eval_rm->callback([&] { cmd_eval_replay_match(rm); });

    // report
    std::string rp_runs, rp_out;
    auto* report = app.add_subcommand("report", "Summarize run traces into a CSV");
    report->add_option("--runs", rp_runs, "Directory of run_<name>.jsonl files")->required();
    report->add_option("-o", rp_out, "Output report CSV")->required();
    report->callback([&] { write_report(rp_runs, rp_out); });

    // experiment
    std::string ex_spec, ex_out;
    auto* experiment = app.add_subcommand("experiment", "End-to-end seeded comparison");
    experiment->add_option("--spec", ex_spec, "Experiment spec file")->required();
    experiment->add_option("-o", ex_out, "Output directory")->required();
    experiment->callback([&] {
        const ExperimentResult r = run_experiment(ExperimentSpec::from_file(ex_spec), ex_out);
        std::cout << "artifacts in " << r.out_dir << "\n";
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

}  // namespace iconq
