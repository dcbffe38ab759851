#pragma once

#include <string>
#include <vector>

#include "iconq/workload.hpp"

namespace iconq {

// Pool file: one JSON array, one object per query.
void write_pool(const QueryPool& pool, const std::string& path);
QueryPool read_pool(const std::string& path);

// Traces are JSON Lines, one record per line, fixed field order:
// query_id, arrival_time, submit_time, finish_time, system_runtime.
void write_trace(const std::vector<ExecutedRecord>& trace, const std::string& path);
std::vector<ExecutedRecord> read_trace(const std::string& path);

// Arrival lists share the JSONL shape with fields query_id, arrival_time.
void write_arrivals(const std::vector<ArrivalEvent>& arrivals, const std::string& path);
std::vector<ArrivalEvent> read_arrivals(const std::string& path);

// Replay targets: JSONL with fields arrival_time, target_runtime.
struct ReplayTarget {
    double arrival_time;
    double target_runtime;
};
void write_targets(const std::vector<ReplayTarget>& targets, const std::string& path);
std::vector<ReplayTarget> read_targets(const std::string& path);

}  // namespace iconq
