#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "iconq/config.hpp"
#include "iconq/featurizer.hpp"
#include "iconq/oracle.hpp"
#include "iconq/predictor.hpp"
#include "iconq/qshuffler.hpp"
#include "iconq/workload.hpp"

namespace iconq {

struct SchedulerConfig {
    int lookahead = 2;            // upcoming finish events probed by the delta tests
    double tau_short = 5.0;       // isolated-estimate threshold for queue bypass, seconds
    double lambda_starve = 0.01;  // queue-age discount applied to the score, per second

    static SchedulerConfig from_kv(KvConfig& kv);
    void check() const;
};

struct WaitingQueryInfo {
    RecordKey record;
    const Query* query;
    double arrival_time;
};

// Per-round evaluation details, exposed for audits and tests.
struct IngestDiagnostics {
    struct Entry {
        RecordKey record;
        QueryId query_id;
        bool candidate;  // passed every lookahead delta test
        double delta1;   // predicted concurrent runtime minus isolated estimate
        double delta2;   // total predicted slowdown inflicted on the running set
        double score;    // delta1 + delta2 - lambda * queueing time; lower is better
    };
    std::vector<Entry> entries;  // one per waiting query, in evaluation order; empty on bypass
    std::int64_t predictor_calls = 0;
    bool bypass = false;
};

// One decision round at time `now`: returns the index (into `waiting`) of the
// query to submit, or nullopt to hold everything until the next event.
//
// A waiting query whose isolated estimate is below cfg.tau_short is returned
// immediately (earliest arrival first) with zero concurrent-predictor calls.
// Otherwise each waiting query is tested against the cfg.lookahead soonest
// predicted finish times t_l: with RQ' the running set predicted still active
// at t_l,
//   d1(t_l) = P(wq, RQ, now) - (P(wq, RQ', t_l) + t_l - now)
//   d2(t_l) = sum_j [P(rq_j, RQ+wq, now) - P(rq_j, RQ'+wq, t_l)]
// (queries predicted finished by t_l contribute their no-newcomer prediction
// to the second term). The query is a candidate iff d1 + d2 <= 0 at every
// t_l — vacuously when nothing is running or lookahead is 0. Candidates are
// ranked by score = delta1 + delta2 - lambda * queueing, ties broken by
// earlier arrival then query id; the minimum is returned.
//
// Predictor traffic per round is bounded by
//   L*|RQ|*|WQ| + |RQ|*|WQ| + |WQ| + |RQ|.
std::optional<std::size_t> iconq_ingest(std::span<const WaitingQueryInfo> waiting,
                                        std::span<const RunningQueryView> running, double now,
                                        ConcurrentRuntimePredictor& predictor,
                                        const BaseRuntimePredictor& stage,
                                        const SchedulerConfig& cfg,
                                        IngestDiagnostics* diag = nullptr);

struct DecisionRow {
    double time = 0.0;
    std::string event;   // "arrival" | "finish"
    std::size_t wq_size = 0;
    std::size_t rq_size = 0;
    std::string action;  // "submit" | "bypass" | "none" | "cap"
    QueryId query_id = -1;  // -1 when no query was selected
    double score = 0.0;
    double delta1 = 0.0;
    double delta2 = 0.0;
    std::int64_t predictor_calls = 0;
};

// JSON Lines, one object per row, keys in a fixed order.
std::string decision_log_to_jsonl(const std::vector<DecisionRow>& rows);

// Admission policy that gates and orders submissions with a concurrency-aware
// runtime predictor. Non-preemptive: once submitted, a query is never touched
// again. Every decision round is appended to the in-memory decision log.
class IconqSchedPolicy : public AdmissionPolicy {
public:
    IconqSchedPolicy(const SchedulerConfig& cfg, ConcurrentRuntimePredictor& predictor,
                     const BaseRuntimePredictor& stage);

    void on_arrival(const ArrivalInstance& a) override;
    void on_finish(RecordKey record, double now) override;
    std::optional<RecordKey> next_submission(double now) override;
    void on_submitted(RecordKey record, double now) override;

    const std::vector<DecisionRow>& decisions() const { return log_; }
    std::size_t waiting_count() const { return wq_.size(); }
    std::size_t running_count() const { return rq_.size(); }

private:
    SchedulerConfig cfg_;
    ConcurrentRuntimePredictor& predictor_;
    const BaseRuntimePredictor& stage_;

    std::vector<WaitingQueryInfo> wq_;  // arrival order
    std::vector<RunningQueryView> rq_;  // submission order
    std::vector<DecisionRow> log_;
    std::string last_event_ = "arrival";
    std::size_t event_cap_ = 0;             // submissions allowed this event
    std::size_t submitted_this_event_ = 0;
};

// Memory-driven admission: submits the largest-estimate waiting query that
// fits under `capacity` minus the estimated usage of the running set. A query
// whose estimate exceeds the whole capacity is admitted only into an empty
// system so it cannot deadlock.
class PgmPolicy : public AdmissionPolicy {
public:
    PgmPolicy(std::function<double(const Query&)> mem_estimator, double capacity);

    void on_arrival(const ArrivalInstance& a) override;
    void on_finish(RecordKey record, double now) override;
    std::optional<RecordKey> next_submission(double now) override;
    void on_submitted(RecordKey record, double now) override;

    double running_usage() const;

private:
    struct Waiting {
        RecordKey record;
        const Query* query;
        double arrival_time;
        double mem;
    };

    std::function<double(const Query&)> mem_;
    double capacity_;
    std::vector<Waiting> wq_;
    std::map<RecordKey, double> running_;
};

// Cluster-mix admission: while fewer than `max_running` queries are running,
// submits the waiting query with the lowest predicted-to-base runtime ratio
// under the current cluster mix. Sees the system only through the mix vector.
class QshufflerPolicy : public AdmissionPolicy {
public:
    QshufflerPolicy(const QshufflerModel& model, FeatureCache& cache, std::int64_t max_running);

    void on_arrival(const ArrivalInstance& a) override;
    void on_finish(RecordKey record, double now) override;
    std::optional<RecordKey> next_submission(double now) override;
    void on_submitted(RecordKey record, double now) override;

private:
    struct Waiting {
        RecordKey record;
        const Query* query;
        double arrival_time;
    };

    int cluster_of(const Query& q);

    const QshufflerModel& model_;
    FeatureCache& cache_;
    std::int64_t max_running_;
    std::vector<Waiting> wq_;
    std::vector<std::pair<RecordKey, int>> rq_;  // record -> cluster
    std::map<QueryId, int> cluster_cache_;
};

}  // namespace iconq
