#pragma once

#include <string>
#include <vector>

#include "iconq/json_io.hpp"
#include "iconq/predictor.hpp"
#include "iconq/workload.hpp"

namespace iconq {

// One arrival slot of a matched workload: the pool query assigned to it, the
// latest concurrency-aware runtime prediction, and whether that prediction
// lies within tolerance of the target runtime.
struct MatchedSlot {
    double arrival_time = 0.0;
    double target_runtime = 0.0;
    QueryId query_id = 0;
    double predicted_runtime = 0.0;
    bool matched = false;
};

struct MatchedTrace {
    std::vector<MatchedSlot> slots;
    double matched_fraction = 0.0;
    int iterations = 0;  // concurrency-aware refinement passes executed
    std::vector<double> fraction_history;  // matched fraction after each pass
};

// Assigns one pool query to every target slot so that its predicted runtime
// under the assignment's own concurrency approaches the target runtime.
// Iteration 0 assigns by nearest isolated-runtime estimate; each later pass
// re-derives the overlap windows implied by the current predictions, predicts
// every slot with the concurrency-aware predictor, and moves every
// out-of-tolerance slot one step along the isolated-runtime order (up when
// predicted short, down when predicted long). Stops when every slot is
// within `tol` of its target or after `max_iters` passes.
MatchedTrace replay_match(const std::vector<ReplayTarget>& targets, const QueryPool& pool,
                          ConcurrentRuntimePredictor& concurrent,
                          const BaseRuntimePredictor& isolated, double tol = 0.2,
                          int max_iters = 100);

// JSONL, one slot per line: arrival_time, target_runtime, query_id,
// predicted_runtime, matched.
void write_matched(const MatchedTrace& m, const std::string& path);

}  // namespace iconq
