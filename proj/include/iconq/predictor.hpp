#pragma once

#include <span>
#include <vector>

#include "iconq/workload.hpp"

namespace iconq {

// A running query as the scheduling proxy sees it: submitted and not yet
// finished. `record` identifies the execution instance within the host run.
struct RunningQueryView {
    const Query* query;
    double submit_time;
    RecordKey record;
};

// Predicts total system runtime (submit to finish, seconds) of a query under
// a hypothetical concurrent mix. All methods are pure with respect to the
// arguments; implementations may cache derived features internally.
class ConcurrentRuntimePredictor {
public:
    virtual ~ConcurrentRuntimePredictor() = default;

    // Runtime of `incoming` if it were submitted at `when` next to `running`.
    // `running` lists queries still active at `when` under the hypothesis.
    virtual double predict_incoming(const Query& incoming,
                                    std::span<const RunningQueryView> running, double when) = 0;

    // Runtime of running[target] under the current set, nothing added.
    virtual double predict_running(std::size_t target, std::span<const RunningQueryView> running,
                                   double now) = 0;

    // Runtime of running[target] if `incoming` were additionally submitted at
    // `when` (>= now of the running snapshot).
    virtual double predict_running_with_new(std::size_t target,
                                            std::span<const RunningQueryView> running,
                                            const Query& incoming, double when) = 0;
};

// Isolated-runtime estimate (no concurrency context).
class BaseRuntimePredictor {
public:
    virtual ~BaseRuntimePredictor() = default;
    virtual double predict_base(const Query& q) const = 0;
};

}  // namespace iconq
