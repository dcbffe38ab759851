#pragma once

#include <deque>
#include <memory>
#include <optional>
#include <vector>

#include "iconq/config.hpp"
#include "iconq/predictor.hpp"
#include "iconq/workload.hpp"

namespace iconq {

class Rng;

struct OracleParams {
    double cpu_slots = 4.0;     // >= 1
    double io_channels = 2.0;   // >= 1
    double mem_capacity = 1.0;  // > 0
    double mem_penalty = 4.0;   // >= 0
    double share_coeff = 0.3;   // in [0, 1)
    double min_rate = 0.05;     // in (0, 1]
    std::int64_t mpl = 12;      // native multiprogramming limit, >= 1

    static OracleParams from_kv(KvConfig& kv);
    void check() const;
};

// Instantaneous progress rate of q given the full set of currently executing
// queries (q included). Rate 1 means one second of isolated work per second.
// Throws ContractError if q is not a member of `running`.
double progress_rate(const Query& q, const std::vector<const Query*>& running,
                     const OracleParams& params);

struct ArrivalInstance {
    RecordKey record;
    const Query* query;
    double arrival_time;
};

class Simulation;

// Admission decisions in front of the simulated DBMS. The simulator calls
// next_submission repeatedly after each event until it returns nullopt; each
// call is one decision round at the current clock.
class AdmissionPolicy {
public:
    virtual ~AdmissionPolicy() = default;
    virtual void attach(Simulation&) {}
    virtual void on_arrival(const ArrivalInstance& a) = 0;
    virtual void on_finish(RecordKey record, double now) = 0;
    virtual std::optional<RecordKey> next_submission(double now) = 0;
    virtual void on_submitted(RecordKey /*record*/, double /*now*/) {}
    // Fixed-plan experiments start queries immediately, skipping the
    // simulated DBMS's own multiprogramming cap.
    virtual bool bypass_internal_cap() const { return false; }
};

namespace detail {

struct EngineEntry {
    const Query* query;
    RecordKey record;
    double arrival_time;
    double submit_time;
    double remaining;  // seconds of isolated work left
    bool started;      // false while waiting in the internal FIFO
};

// Submitted-but-unfinished queries plus the internal admission FIFO.
// Rates are piecewise constant between events.
struct EngineState {
    std::vector<EngineEntry> entries;
    std::deque<RecordKey> fifo;  // records awaiting an internal slot
    double clock = 0.0;

    std::size_t started_count() const;
    const EngineEntry* find(RecordKey r) const;
};

std::vector<double> engine_rates(const EngineState& s, const OracleParams& p);
void engine_advance(EngineState& s, const OracleParams& p, double t);
// Earliest finish among started entries; ties broken by query_id then record.
std::optional<std::pair<double, std::size_t>> engine_next_finish(const EngineState& s,
                                                                 const OracleParams& p);
void engine_submit(EngineState& s, const OracleParams& p, const Query* q, RecordKey record,
                   double arrival, double now, bool bypass_cap);
void engine_start_pending(EngineState& s, const OracleParams& p);
// Pops the finishing entry; pre: entry remaining is zero at the clock.
EngineEntry engine_pop_finished(EngineState& s, std::size_t idx);

}  // namespace detail

// Event-driven execution of a workload against the contention model.
class Simulation {
public:
    Simulation(const QueryPool& pool, const OracleParams& params, AdmissionPolicy& policy);

    // Replays a fixed arrival list. Returns records ordered by finish time.
    std::vector<ExecutedRecord> run(const std::vector<ArrivalEvent>& arrivals);

    // k closed-loop clients, each submitting its next query the moment the
    // previous one finishes. Returns records finishing within `duration`.
    std::vector<ExecutedRecord> run_closed_loop(int clients, double duration, std::uint64_t seed);

    const OracleParams& params() const { return params_; }
    const detail::EngineState& engine() const { return state_; }
    double now() const { return state_.clock; }

private:
    struct PendingArrival {
        double time;
        QueryId query_id;
        std::int64_t seq;  // tie-break: creation order
        int client;        // -1 in replay mode
    };

    const QueryPool& pool_;
    OracleParams params_;
    AdmissionPolicy& policy_;

    detail::EngineState state_;
    std::vector<PendingArrival> pending_;  // heap by (time, seq)
    std::vector<ArrivalInstance> instances_;
    std::vector<int> client_of_;  // issuing closed-loop client per record, -1 in replay
    std::vector<ExecutedRecord> records_;
    std::int64_t arrival_seq_ = 0;

    void push_arrival(double time, QueryId qid, int client);
    std::vector<ExecutedRecord> drive(double issue_horizon, std::vector<Rng>* client_rngs,
                                      double duration);
    friend class OracleLivePredictor;
};

std::vector<ExecutedRecord> simulate(const QueryPool& pool, const std::vector<ArrivalEvent>& arrivals,
                                     AdmissionPolicy& policy, const OracleParams& params);

std::vector<ExecutedRecord> run_closed_loop(const QueryPool& pool, int clients, double duration,
                                            const OracleParams& params, std::uint64_t seed);
std::vector<ExecutedRecord> run_closed_loop(const QueryPool& pool, int clients, double duration,
                                            const OracleParams& params, std::uint64_t seed,
                                            AdmissionPolicy& policy);

// Submit-on-arrival; the simulator's internal cap provides the FIFO + MPL
// behavior of an unassisted DBMS.
class NativeFifoPolicy : public AdmissionPolicy {
public:
    void on_arrival(const ArrivalInstance& a) override { queue_.push_back(a.record); }
    void on_finish(RecordKey, double) override {}
    std::optional<RecordKey> next_submission(double) override;

private:
    std::deque<RecordKey> queue_;
};

// Starts every query at its arrival time unconditionally.
class FixedPlanPolicy : public NativeFifoPolicy {
public:
    bool bypass_internal_cap() const override { return true; }
};

// Exact predictions obtained by forward-simulating the live engine state with
// no future arrivals. Must be attached to the simulation it predicts for.
class OracleLivePredictor : public ConcurrentRuntimePredictor {
public:
    void bind(const Simulation& sim) { sim_ = &sim; }

    double predict_incoming(const Query& incoming, std::span<const RunningQueryView> running,
                            double when) override;
    double predict_running(std::size_t target, std::span<const RunningQueryView> running,
                           double now) override;
    double predict_running_with_new(std::size_t target, std::span<const RunningQueryView> running,
                                    const Query& incoming, double when) override;

private:
    const Simulation* sim_ = nullptr;
    double finish_of(detail::EngineState state, RecordKey target, const Query* inject,
                     double inject_at) const;
};

// Window-local exact model: replays just the given members from their submit
// times (fixed-plan, no cap) and reads off the target's runtime. Standalone;
// used where no live simulation exists (replay matching, tests).
class WindowOraclePredictor : public ConcurrentRuntimePredictor {
public:
    explicit WindowOraclePredictor(const OracleParams& params) : params_(params) {}

    double predict_incoming(const Query& incoming, std::span<const RunningQueryView> running,
                            double when) override;
    double predict_running(std::size_t target, std::span<const RunningQueryView> running,
                           double now) override;
    double predict_running_with_new(std::size_t target, std::span<const RunningQueryView> running,
                                    const Query& incoming, double when) override;

private:
    OracleParams params_;
    double replay(std::span<const RunningQueryView> members, const Query* extra, double extra_at,
                  RecordKey target) const;
};

}  // namespace iconq
