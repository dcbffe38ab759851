#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "iconq/common.hpp"
#include "iconq/config.hpp"

namespace iconq {

// Closed set of plan operator kinds. Parsing an unknown kind is a DataError.
enum class OpKind : int {
    seq_scan = 0,
    index_scan,
    bitmap_heap_scan,
    hash_join,
    merge_join,
    nested_loop,
    sort,
    hash,
    aggregate,
    group_aggregate,
    materialize,
    gather,
    append,
    limit,
    window_agg,
    kCount  // = 15
};

constexpr int kOpKindCount = static_cast<int>(OpKind::kCount);

const char* op_kind_name(OpKind k);
OpKind op_kind_from_name(const std::string& name);
bool op_kind_is_join(OpKind k);

struct PlanOperator {
    OpKind kind;
    double est_rows;  // >= 0
};

// Ground-truth execution profile. Consumed only by the simulator; predictors
// must not read it.
struct ResourceProfile {
    double base_runtime;                   // isolated runtime, seconds, > 0
    double io_fraction;                    // in [0, 1]
    double mem_demand;                     // units of simulator memory capacity, >= 0
    std::vector<std::string> scan_tables;  // tables this query scans
};

struct Query {
    QueryId query_id;
    std::int64_t template_id;
    std::vector<PlanOperator> operators;
    std::map<std::string, double> table_scans;  // table -> estimated scanned rows
    ResourceProfile profile;
};

class QueryPool {
public:
    QueryPool() = default;
    explicit QueryPool(std::vector<Query> queries);

    const std::vector<Query>& queries() const { return queries_; }
    std::size_t size() const { return queries_.size(); }
    const Query& by_id(QueryId id) const;
    bool contains(QueryId id) const { return index_.count(id) > 0; }

private:
    std::vector<Query> queries_;
    std::map<QueryId, std::size_t> index_;
};

struct ArrivalEvent {
    QueryId query_id;
    double arrival_time;
};

// One execution instance. finish_time == submit_time + system_runtime.
struct ExecutedRecord {
    QueryId query_id;
    double arrival_time;
    double submit_time;
    double finish_time;
    double system_runtime;

    double queueing_time() const { return submit_time - arrival_time; }
    double e2e_time() const { return finish_time - arrival_time; }
};

struct WindowMember {
    RecordKey record;  // line index within the trace
    QueryId query_id;
    double submit_time;
};

// All records whose [submit, finish) interval overlaps the target's,
// target included, ordered by (submit_time, query_id, record).
struct ConcurrencyWindow {
    RecordKey target_record;
    std::vector<WindowMember> members;
    std::size_t target_pos;

    std::size_t size() const { return members.size(); }
};

struct PoolConfig {
    std::int64_t size = 0;  // required, > 0
    std::int64_t templates = 12;
    std::int64_t catalog_tables = 20;
    double runtime_body_mu = 2.2;
    double runtime_body_sigma = 1.1;
    double tail_fraction = 0.12;
    double tail_scale = 60.0;
    double tail_shape = 1.1;
    double runtime_min = 1.0;
    double runtime_max = 1000.0;
    double mem_heavy_fraction = 0.45;
    double io_heavy_fraction = 0.30;
    double feature_noise = 0.08;
    double rows_per_second = 1.0e5;
    double rows_per_capacity = 5.0e6;

    static PoolConfig from_kv(KvConfig& kv);
    void check() const;
};

struct ArrivalConfig {
    double duration_s = 0.0;      // required, > 0
    double base_rate_per_s = 0.0; // required, > 0
    double diurnal_amplitude = 0.6;  // in [0, 1)
    double diurnal_period_s = 86400.0;
    double diurnal_phase = 0.0;
    double spike_rate_per_hour = 0.5;
    double spike_width_s = 120.0;
    double spike_size_mean = 6.0;

    static ArrivalConfig from_kv(KvConfig& kv);
    void check() const;
};

// Deterministic: (config, seed) fully determine the result.
QueryPool generate_pool(const PoolConfig& cfg, std::uint64_t seed);

// Nonhomogeneous Poisson arrivals (sinusoidal day shape, additive spike
// bursts), query ids drawn uniformly from the pool. Sorted by arrival_time.
std::vector<ArrivalEvent> generate_arrivals(const QueryPool& pool, const ArrivalConfig& cfg,
                                            std::uint64_t seed);

// One window per record, keyed by trace line index. Half-open intervals:
// touching endpoints do not overlap.
std::vector<ConcurrencyWindow> derive_windows(const std::vector<ExecutedRecord>& trace);

// The n largest tables by total estimated scanned rows across the pool,
// ties broken by name; result sorted by name.
std::vector<std::string> catalog_from_pool(const QueryPool& pool, std::size_t n);

void validate_trace(const std::vector<ExecutedRecord>& trace);

}  // namespace iconq
