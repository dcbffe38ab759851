#include "iconq/experiment.hpp"

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>

#include "iconq/common.hpp"
#include "iconq/function_model.hpp"
#include "iconq/json_io.hpp"
#include "iconq/metrics.hpp"
#include "json.hpp"

namespace iconq {

namespace {

namespace fs = std::filesystem;

std::vector<std::string> split_list(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : text) {
        if (c == ',') {
            if (!cur.empty()) out.push_back(cur);
            cur.clear();
        } else if (!std::isspace(static_cast<unsigned char>(c))) {
            cur.push_back(c);
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

template <typename Fn>
auto stage_guard(const std::string& stage, Fn&& fn) -> decltype(fn()) {
    try {
        return fn();
    } catch (const std::exception& e) {
        throw DataError("experiment stage '" + stage + "': " + e.what());
    }
}

double max_est_rows(const Query& q) {
    double rows = 0.0;
    for (const PlanOperator& op : q.operators) rows = std::max(rows, op.est_rows);
    return rows;
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open for writing: " + path);
    f << text;
    if (!f) throw DataError("write failed: " + path);
}

}  // namespace

double window_prediction(ConcurrentRuntimePredictor& pred,
                         const std::vector<ExecutedRecord>& trace, const ConcurrencyWindow& w,
                         const QueryPool& pool) {
    const ExecutedRecord& target = trace[static_cast<std::size_t>(w.target_record)];
    std::vector<RunningQueryView> others;
    others.reserve(w.members.size());
    for (const WindowMember& m : w.members) {
        if (m.record == w.target_record) continue;
        others.push_back({&pool.by_id(m.query_id), m.submit_time, m.record});
    }
    return pred.predict_incoming(pool.by_id(target.query_id), others, target.submit_time);
}

double qshuffler_prediction(const QshufflerBundle& bundle, FeatureCache& cache,
                            const std::vector<ExecutedRecord>& trace, const ConcurrencyWindow& w,
                            const QueryPool& pool) {
    const ExecutedRecord& target = trace[static_cast<std::size_t>(w.target_record)];
    std::vector<int> mix(static_cast<std::size_t>(bundle.model.k()), 0);
    for (const WindowMember& m : w.members) {
        if (m.record == w.target_record) continue;
        const ExecutedRecord& other = trace[static_cast<std::size_t>(m.record)];
        const bool active = other.submit_time <= target.submit_time &&
                            other.finish_time > target.submit_time;
        if (!active) continue;
        const int c = bundle.model.cluster_of(cache.qfv(pool.by_id(m.query_id)));
        mix[static_cast<std::size_t>(c)] += 1;
    }
    return bundle.model.predict(cache.qfv(pool.by_id(target.query_id)), mix);
}

std::string prediction_report_csv(const std::vector<std::string>& names,
                                  const std::vector<ErrorSummary>& errors) {
    if (names.size() != errors.size())
        throw ContractError("prediction_report_csv: names and errors must align");
    std::ostringstream csv;
    csv << "predictor,count,q_mean,q_p50,q_p90,q_p95,abs_mean,abs_p50,abs_p90,abs_p95\n";
    for (std::size_t i = 0; i < names.size(); ++i) {
        const ErrorSummary& e = errors[i];
        csv << names[i] << ',' << e.q.count << ',' << format_double(e.q.mean) << ','
            << format_double(e.q.p50) << ',' << format_double(e.q.p90) << ','
            << format_double(e.q.p95) << ',' << format_double(e.abs.mean) << ','
            << format_double(e.abs.p50) << ',' << format_double(e.abs.p90) << ','
            << format_double(e.abs.p95) << '\n';
    }
    return csv.str();
}

ExperimentSpec ExperimentSpec::from_file(const std::string& path) {
    KvConfig kv = KvConfig::parse_file(path);
    ExperimentSpec spec;
    spec.seed = static_cast<std::uint64_t>(kv.get_int("seed", 1));

    const std::string pool_file = kv.get_string("pool_config", "");
    if (!pool_file.empty()) {
        KvConfig sub = KvConfig::parse_file(pool_file);
        spec.pool = PoolConfig::from_kv(sub);
        sub.validate();
    } else {
        spec.pool.size = kv.get_int("pool_size", 50);
    }

    const std::string arrival_file = kv.get_string("arrival_config", "");
    if (!arrival_file.empty()) {
        KvConfig sub = KvConfig::parse_file(arrival_file);
        spec.arrivals = ArrivalConfig::from_kv(sub);
        sub.validate();
    } else {
        spec.arrivals.duration_s = kv.get_double("arrival_duration_s", 600.0);
        spec.arrivals.base_rate_per_s = kv.get_double("arrival_rate_per_s", 0.2);
    }

    const std::string oracle_file = kv.get_string("oracle_config", "");
    if (!oracle_file.empty()) {
        KvConfig sub = KvConfig::parse_file(oracle_file);
        spec.oracle = OracleParams::from_kv(sub);
        sub.validate();
    }
    const std::string sched_file = kv.get_string("scheduler_config", "");
    if (!sched_file.empty()) {
        KvConfig sub = KvConfig::parse_file(sched_file);
        spec.scheduler = SchedulerConfig::from_kv(sub);
        sub.validate();
    }
    const std::string stage_file = kv.get_string("stage_hp", "");
    if (!stage_file.empty()) {
        KvConfig sub = KvConfig::parse_file(stage_file);
        spec.stage_hp = StageHp::from_kv(sub);
        sub.validate();
    }
    const std::string iconq_file = kv.get_string("iconq_hp", "");
    if (!iconq_file.empty()) {
        KvConfig sub = KvConfig::parse_file(iconq_file);
        spec.iconq_hp = IconqHp::from_kv(sub);
        sub.validate();
    }
    const std::string qsh_file = kv.get_string("qshuffler_hp", "");
    if (!qsh_file.empty()) {
        KvConfig sub = KvConfig::parse_file(qsh_file);
        spec.qshuffler_hp = QshufflerHp::from_kv(sub);
        sub.validate();
    }

    spec.policies = split_list(kv.get_string("policies", "native,iconq"));
    spec.predictors = split_list(kv.get_string("predictors", "stage,iconq"));
    std::vector<int> clients;
    for (const std::string& c : split_list(kv.get_string("train_clients", "2,4,8")))
        clients.push_back(std::stoi(c));
    spec.train_clients = clients;
    spec.train_duration_s = kv.get_double("train_duration_s", 3600.0);
    spec.pgm_capacity = kv.get_double("pgm_capacity", 1.0);
    spec.pgm_rows_per_capacity = kv.get_double("pgm_rows_per_capacity", 5.0e6);
    spec.qshuffler_mpl = kv.get_int("qshuffler_mpl", 0);
    spec.eval_seed_offset = static_cast<std::uint64_t>(kv.get_int("eval_seed_offset", 1000));
    kv.validate();
    spec.check();
    return spec;
}

void ExperimentSpec::check() const {
    pool.check();
    arrivals.check();
    oracle.check();
    scheduler.check();
    stage_hp.check();
    iconq_hp.check();
    qshuffler_hp.check();
    for (const std::string& p : policies)
        if (p != "native" && p != "iconq" && p != "pgm" && p != "qshuffler")
            throw ConfigError("experiment: unknown policy '" + p + "'");
    for (const std::string& p : predictors)
        if (p != "stage" && p != "function" && p != "iconq" && p != "qshuffler")
            throw ConfigError("experiment: unknown predictor '" + p + "'");
    if (policies.empty()) throw ConfigError("experiment: at least one policy required");
    if (train_clients.empty()) throw ConfigError("experiment: train_clients must be non-empty");
    for (int c : train_clients)
        if (c < 1) throw ConfigError("experiment: train_clients entries must be >= 1");
    if (!(train_duration_s > 0.0))
        throw ConfigError("experiment: train_duration_s must be > 0");
    if (!(pgm_capacity > 0.0)) throw ConfigError("experiment: pgm_capacity must be > 0");
    if (!(pgm_rows_per_capacity > 0.0))
        throw ConfigError("experiment: pgm_rows_per_capacity must be > 0");
    if (qshuffler_mpl < 0) throw ConfigError("experiment: qshuffler_mpl must be >= 0");
}

std::string policy_report_csv(const std::vector<std::string>& names,
                              const std::vector<std::vector<ExecutedRecord>>& traces) {
    if (names.size() != traces.size())
        throw ContractError("policy_report_csv: names and traces must align");
    std::optional<MetricsSummary> native;
    std::vector<MetricsSummary> summaries;
    summaries.reserve(traces.size());
    for (std::size_t i = 0; i < traces.size(); ++i) {
        summaries.push_back(summarize(traces[i], derive_windows(traces[i])));
        if (names[i] == "native") native = summaries.back();
    }

    std::ostringstream csv;
    csv << "policy,count,concurrent_count,"
           "mean_e2e,p50_e2e,p90_e2e,p95_e2e,"
           "mean_system,p50_system,p90_system,p95_system,"
           "mean_queueing,p50_queueing,p90_queueing,p95_queueing,"
           "improvement_mean_e2e,improvement_p90_e2e\n";
    for (std::size_t i = 0; i < names.size(); ++i) {
        const MetricsSummary& s = summaries[i];
        csv << names[i] << ',' << s.count << ',' << s.concurrent_count << ','
            << format_double(s.e2e.mean) << ',' << format_double(s.e2e.p50) << ','
            << format_double(s.e2e.p90) << ',' << format_double(s.e2e.p95) << ','
            << format_double(s.system_runtime.mean) << ',' << format_double(s.system_runtime.p50)
            << ',' << format_double(s.system_runtime.p90) << ','
            << format_double(s.system_runtime.p95) << ',' << format_double(s.queueing.mean) << ','
            << format_double(s.queueing.p50) << ',' << format_double(s.queueing.p90) << ','
            << format_double(s.queueing.p95) << ',';
        if (native && native->e2e.mean > 0.0) {
            csv << format_double(improvement(native->e2e.mean, s.e2e.mean)) << ','
                << format_double(improvement(native->e2e.p90, s.e2e.p90));
        } else {
            csv << ',';
        }
        csv << '\n';
    }
    return csv.str();
}

ExperimentResult run_experiment(const ExperimentSpec& spec, const std::string& out_dir) {
    spec.check();
    fs::create_directories(out_dir);
    const auto path_in = [&](const std::string& name) {
        return (fs::path(out_dir) / name).string();
    };

    ExperimentResult result;
    result.out_dir = out_dir;

    // Stage 1: the query pool.
    const QueryPool pool = stage_guard("generate pool", [&] {
        QueryPool p = generate_pool(spec.pool, spec.seed);
        write_pool(p, path_in("pool.json"));
        return p;
    });

    const bool want_iconq_policy =
        std::count(spec.policies.begin(), spec.policies.end(), "iconq") > 0;
    const bool want_qshuffler_policy =
        std::count(spec.policies.begin(), spec.policies.end(), "qshuffler") > 0;
    const auto wants_predictor = [&](const std::string& name) {
        return std::count(spec.predictors.begin(), spec.predictors.end(), name) > 0;
    };
    const bool need_stage = !spec.predictors.empty() || want_iconq_policy ||
                            want_qshuffler_policy;
    const bool need_iconq = wants_predictor("iconq") || want_iconq_policy;
    const bool need_function = wants_predictor("function");
    const bool need_qshuffler = wants_predictor("qshuffler") || want_qshuffler_policy;

    // Stage 2: closed-loop training corpus (only when something trains on it).
    std::vector<ExecutedRecord> train_trace;
    if (need_stage) {
        train_trace = stage_guard("collect training data", [&] {
            std::vector<ExecutedRecord> all;
            double offset = 0.0;
            for (std::size_t i = 0; i < spec.train_clients.size(); ++i) {
                std::vector<ExecutedRecord> part =
                    run_closed_loop(pool, spec.train_clients[i], spec.train_duration_s,
                                    spec.oracle, spec.seed + 17 * (i + 1));
                for (ExecutedRecord& r : part) {
                    r.arrival_time += offset;
                    r.submit_time += offset;
                    r.finish_time += offset;
                    all.push_back(r);
                }
                offset += spec.train_duration_s + 1000.0;
            }
            if (all.empty()) throw DataError("training corpus came back empty");
            write_trace(all, path_in("train_trace.jsonl"));
            return all;
        });
    }

    // Stage 3: train the models.
    std::optional<StageModel> stage_model;
    if (need_stage) {
        stage_model = stage_guard("train stage", [&] {
            StageModel m = StageModel::train(train_trace, pool, spec.stage_hp);
            m.save(path_in("ckpt_stage.json"));
            return m;
        });
    }
    const FeatureConfig fc;
    std::optional<IconqBundle> iconq_bundle;
    if (need_iconq) {
        iconq_bundle = stage_guard("train iconq", [&] {
            FeatureCache cache(fc, catalog_from_pool(pool, std::size_t(fc.n_t)),
                               [m = &*stage_model](const Query& q) { return m->predict_avg(q); });
            const std::vector<TrainSample> samples = build_training_set(train_trace, pool, cache);
            IconqModel model = IconqModel::train(samples, fc, spec.iconq_hp);
            IconqBundle b{fc, *stage_model, std::move(model)};
            b.save(path_in("ckpt_iconq.json"));
            return b;
        });
    }
    std::optional<FunctionBundle> function_bundle;
    if (need_function) {
        function_bundle = stage_guard("train function", [&] {
            FunctionSystem sys;
            const auto training = build_function_training(train_trace, pool, *stage_model, sys);
            const FunctionFit fit = fit_function_params(training, spec.seed);
            FunctionBundle b{*stage_model, fit.params, sys};
            b.save(path_in("ckpt_function.json"));
            return b;
        });
    }
    std::optional<QshufflerBundle> qshuffler_bundle;
    std::optional<FeatureCache> qshuffler_cache;
    if (need_qshuffler) {
        qshuffler_bundle = stage_guard("train qshuffler", [&] {
            FeatureCache cache(fc, catalog_from_pool(pool, std::size_t(fc.n_t)),
                               [m = &*stage_model](const Query& q) { return m->predict_avg(q); });
            QshufflerModel model =
                QshufflerModel::train(train_trace, pool, cache, spec.qshuffler_hp);
            QshufflerBundle b{fc, *stage_model, std::move(model)};
            b.save(path_in("ckpt_qshuffler.json"));
            return b;
        });
        qshuffler_cache.emplace(fc, catalog_from_pool(pool, std::size_t(fc.n_t)),
                                [m = &*stage_model](const Query& q) { return m->predict_avg(q); });
    }

    // Stage 4: held-out arrivals.
    const std::vector<ArrivalEvent> eval_arrivals = stage_guard("generate arrivals", [&] {
        auto a = generate_arrivals(pool, spec.arrivals, spec.seed + spec.eval_seed_offset);
        write_arrivals(a, path_in("eval_arrivals.jsonl"));
        return a;
    });

    // Stage 5: simulate every requested policy on the held-out arrivals.
    std::map<std::string, std::vector<ExecutedRecord>> runs;
    const auto native_run = [&]() -> const std::vector<ExecutedRecord>& {
        auto it = runs.find("native");
        if (it == runs.end()) {
            it = runs.emplace("native", stage_guard("simulate native", [&] {
                             NativeFifoPolicy policy;
                             return simulate(pool, eval_arrivals, policy, spec.oracle);
                         }))
                     .first;
        }
        return it->second;
    };

    for (const std::string& name : spec.policies) {
        if (runs.count(name)) continue;
        if (name == "native") {
            native_run();
        } else if (name == "iconq") {
            runs.emplace(name, stage_guard("simulate iconq", [&] {
                IconqPredictor predictor(*iconq_bundle);
                IconqSchedPolicy policy(spec.scheduler, predictor, iconq_bundle->stage);
                auto trace = simulate(pool, eval_arrivals, policy, spec.oracle);
                write_text(path_in("decisions_iconq.jsonl"),
                           decision_log_to_jsonl(policy.decisions()));
                return trace;
            }));
        } else if (name == "pgm") {
            runs.emplace(name, stage_guard("simulate pgm", [&] {
                PgmPolicy policy(
                    [scale = spec.pgm_rows_per_capacity](const Query& q) {
                        return max_est_rows(q) / scale;
                    },
                    spec.pgm_capacity);
                return simulate(pool, eval_arrivals, policy, spec.oracle);
            }));
        } else if (name == "qshuffler") {
            runs.emplace(name, stage_guard("simulate qshuffler", [&] {
                const std::int64_t mpl =
                    spec.qshuffler_mpl > 0 ? spec.qshuffler_mpl : spec.oracle.mpl;
                QshufflerPolicy policy(qshuffler_bundle->model, *qshuffler_cache, mpl);
                return simulate(pool, eval_arrivals, policy, spec.oracle);
            }));
        }
    }
    for (const std::string& name : spec.policies) {
        const std::string file = path_in("run_" + name + ".jsonl");
        write_trace(runs.at(name), file);
        result.run_files.push_back(file);
    }

    // Stage 6: predictor accuracy on the native run of the held-out day.
    std::vector<std::string> eval_names;
    std::vector<ErrorSummary> eval_errors;
    if (!spec.predictors.empty()) {
        stage_guard("evaluate predictors", [&] {
            const std::vector<ExecutedRecord>& truth = native_run();
            const std::vector<ConcurrencyWindow> windows = derive_windows(truth);
            std::vector<double> truths;
            truths.reserve(truth.size());
            for (const ExecutedRecord& r : truth) truths.push_back(r.system_runtime);

            for (const std::string& name : spec.predictors) {
                std::vector<double> preds;
                preds.reserve(truth.size());
                if (name == "stage") {
                    for (const ExecutedRecord& r : truth)
                        preds.push_back(stage_model->predict_avg(pool.by_id(r.query_id)));
                } else if (name == "iconq") {
                    IconqPredictor predictor(*iconq_bundle);
                    for (const ConcurrencyWindow& w : windows)
                        preds.push_back(window_prediction(predictor, truth, w, pool));
                } else if (name == "function") {
                    FunctionPredictor predictor(*function_bundle);
                    for (const ConcurrencyWindow& w : windows)
                        preds.push_back(window_prediction(predictor, truth, w, pool));
                } else {  // qshuffler
                    for (const ConcurrencyWindow& w : windows)
                        preds.push_back(qshuffler_prediction(*qshuffler_bundle, *qshuffler_cache,
                                                             truth, w, pool));
                }
                eval_names.push_back(name);
                eval_errors.push_back(prediction_errors(preds, truths));
            }
            return 0;
        });
    }

    // Stage 7: reports.
    stage_guard("write reports", [&] {
        std::vector<std::vector<ExecutedRecord>> traces;
        for (const std::string& name : spec.policies) traces.push_back(runs.at(name));
        const std::string policies_csv = policy_report_csv(spec.policies, traces);
        result.policies_csv = path_in("policies.csv");
        write_text(result.policies_csv, policies_csv);

        if (!eval_names.empty()) {
            result.predictors_csv = path_in("predictors.csv");
            write_text(result.predictors_csv, prediction_report_csv(eval_names, eval_errors));
        }

        nlohmann::ordered_json index;
        index["seed"] = spec.seed;
        index["pool"] = "pool.json";
        if (!train_trace.empty()) index["train_trace"] = "train_trace.jsonl";
        index["eval_arrivals"] = "eval_arrivals.jsonl";
        nlohmann::ordered_json runs_json = nlohmann::ordered_json::object();
        for (const std::string& name : spec.policies)
            runs_json[name] = "run_" + name + ".jsonl";
        index["runs"] = runs_json;
        index["policies_csv"] = "policies.csv";
        if (!eval_names.empty()) index["predictors_csv"] = "predictors.csv";
        write_text(path_in("index.json"), index.dump(2) + "\n");
        return 0;
    });

    return result;
}

void write_report(const std::string& runs_dir, const std::string& out_csv) {
    if (!fs::is_directory(runs_dir))
        throw DataError("report: not a directory: " + runs_dir);
    std::vector<std::string> names;
    for (const auto& entry : fs::directory_iterator(runs_dir)) {
        if (!entry.is_regular_file()) continue;
        const std::string file = entry.path().filename().string();
        if (file.rfind("run_", 0) == 0 && file.size() > 10 &&
            file.substr(file.size() - 6) == ".jsonl")
            names.push_back(file.substr(4, file.size() - 10));
    }
    if (names.empty())
        throw DataError("report: no run_<name>.jsonl files found in " + runs_dir);
    std::sort(names.begin(), names.end());
    std::vector<std::vector<ExecutedRecord>> traces;
    for (const std::string& name : names)
        traces.push_back(read_trace((fs::path(runs_dir) / ("run_" + name + ".jsonl")).string()));
    write_text(out_csv, policy_report_csv(names, traces));
}

}  // namespace iconq
