#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "iconq/iconq_model.hpp"
#include "iconq/metrics.hpp"
#include "iconq/oracle.hpp"
#include "iconq/qshuffler.hpp"
#include "iconq/scheduler.hpp"
#include "iconq/stage.hpp"
#include "iconq/workload.hpp"

namespace iconq {

// Everything one end-to-end comparison needs, loadable from a key = value
// file. File paths referenced by the spec are resolved relative to the
// process working directory.
struct ExperimentSpec {
    std::uint64_t seed = 1;

    PoolConfig pool;          // pool_config = <file>, else defaults + pool_size key
    ArrivalConfig arrivals;   // arrival_config = <file>, else defaults + keys below
    OracleParams oracle;      // oracle_config = <file>
    SchedulerConfig scheduler;  // scheduler_config = <file>

    StageHp stage_hp;            // stage_hp = <file>
    IconqHp iconq_hp;            // iconq_hp = <file>
    QshufflerHp qshuffler_hp;    // qshuffler_hp = <file>

    std::vector<std::string> policies = {"native", "iconq"};  // policies = a,b,...
    std::vector<std::string> predictors = {"stage", "iconq"};  // predictors = a,b,...

    std::vector<int> train_clients = {2, 4, 8};  // train_clients = 2,4,8
    double train_duration_s = 3600.0;            // per client count

    double pgm_capacity = 1.0;
    double pgm_rows_per_capacity = 5.0e6;
    std::int64_t qshuffler_mpl = 0;  // 0 means: use the oracle's native mpl

    std::uint64_t eval_seed_offset = 1000;

    static ExperimentSpec from_file(const std::string& path);
    void check() const;
};

struct ExperimentResult {
    std::string out_dir;
    std::string policies_csv;    // empty when no policy rows were produced
    std::string predictors_csv;  // empty when no predictors were evaluated
    std::vector<std::string> run_files;  // run_<policy>.jsonl, spec order
};

// Orchestration, start to finish: generate the pool, collect closed-loop
// training data, train the requested predictors, generate held-out arrivals,
// simulate them under every requested policy, and write summaries. All
// artifacts land in out_dir; the run is a pure function of (spec, seed).
ExperimentResult run_experiment(const ExperimentSpec& spec, const std::string& out_dir);

// Summarizes every run_<name>.jsonl in runs_dir into one CSV (rows sorted by
// name; improvement columns relative to the "native" row when present).
void write_report(const std::string& runs_dir, const std::string& out_csv);

// Shared CSV emission for policy traces, used by run_experiment and the
// report command. Rows follow the order of `names`.
std::string policy_report_csv(const std::vector<std::string>& names,
                              const std::vector<std::vector<ExecutedRecord>>& traces);

// Concurrent-runtime prediction of one executed record: every other window
// member is presented to the predictor as running at its own submit time.
double window_prediction(ConcurrentRuntimePredictor& pred,
                         const std::vector<ExecutedRecord>& trace, const ConcurrencyWindow& w,
                         const QueryPool& pool);

// Qshuffler's view of the same record: the cluster mix active at submission.
double qshuffler_prediction(const QshufflerBundle& bundle, FeatureCache& cache,
                            const std::vector<ExecutedRecord>& trace, const ConcurrencyWindow& w,
                            const QueryPool& pool);

// One row per predictor: count plus q-error and absolute-error percentiles.
std::string prediction_report_csv(const std::vector<std::string>& names,
                                  const std::vector<ErrorSummary>& errors);

}  // namespace iconq
