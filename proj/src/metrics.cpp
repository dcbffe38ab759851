#include "iconq/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <iostream>
#include <limits>

#include "iconq/common.hpp"

namespace iconq {

namespace {

constexpr double kRuntimeFloor = 0.1;

double nearest_rank(const std::vector<double>& sorted, double pct) {
    const std::size_t n = sorted.size();
    std::size_t rank = static_cast<std::size_t>(std::ceil(pct / 100.0 * double(n)));
    if (rank == 0) rank = 1;
    if (rank > n) rank = n;
    return sorted[rank - 1];
}

int join_count(const Query& q) {
    int joins = 0;
    for (const PlanOperator& op : q.operators)
        if (op_kind_is_join(op.kind)) ++joins;
    return joins;
}

}  // namespace

double q_error(double pred, double truth) {
    const double p = std::max(pred, kRuntimeFloor);
    const double t = std::max(truth, kRuntimeFloor);
    if (!(p > 0.0) || !(t > 0.0)) throw DataError("q_error: non-positive value after flooring");
    return std::max(p / t, t / p);
}

Percentiles percentiles_of(std::vector<double> values) {
    Percentiles out;
    out.count = values.size();
    if (values.empty()) {
        out.mean = out.p50 = out.p90 = out.p95 = std::numeric_limits<double>::quiet_NaN();
        return out;
    }
    std::sort(values.begin(), values.end());
    double sum = 0.0;
    for (double v : values) sum += v;
    out.mean = sum / double(values.size());
    out.p50 = nearest_rank(values, 50.0);
    out.p90 = nearest_rank(values, 90.0);
    out.p95 = nearest_rank(values, 95.0);
    return out;
}

MetricsSummary summarize(const std::vector<ExecutedRecord>& trace,
                         const std::vector<ConcurrencyWindow>& windows) {
    if (trace.size() != windows.size())
        throw ContractError("summarize: trace and windows must be index-aligned");
    std::vector<double> e2e, sys, queue, e2e_c, sys_c, queue_c;
    e2e.reserve(trace.size());
    sys.reserve(trace.size());
    queue.reserve(trace.size());
    for (std::size_t i = 0; i < trace.size(); ++i) {
        const ExecutedRecord& r = trace[i];
        e2e.push_back(r.e2e_time());
        sys.push_back(r.system_runtime);
        queue.push_back(r.queueing_time());
        if (windows[i].size() > 1) {
            e2e_c.push_back(r.e2e_time());
            sys_c.push_back(r.system_runtime);
            queue_c.push_back(r.queueing_time());
        }
    }
    MetricsSummary out;
    out.count = trace.size();
    out.concurrent_count = e2e_c.size();
    out.e2e = percentiles_of(std::move(e2e));
    out.system_runtime = percentiles_of(std::move(sys));
    out.queueing = percentiles_of(std::move(queue));
    out.e2e_concurrent = percentiles_of(std::move(e2e_c));
    out.system_concurrent = percentiles_of(std::move(sys_c));
    out.queueing_concurrent = percentiles_of(std::move(queue_c));
    return out;
}

ErrorSummary prediction_errors(std::span<const double> predictions,
                               std::span<const double> truths) {
    if (predictions.size() != truths.size())
        throw ContractError("prediction_errors: size mismatch");
    std::vector<double> q, abs;
    q.reserve(predictions.size());
    abs.reserve(predictions.size());
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        q.push_back(q_error(predictions[i], truths[i]));
        abs.push_back(std::abs(predictions[i] - truths[i]));
    }
    return ErrorSummary{percentiles_of(std::move(q)), percentiles_of(std::move(abs))};
}

double improvement(double baseline, double ours) {
    if (!(baseline > 0.0)) throw DataError("improvement: baseline must be positive");
    return (baseline - ours) / baseline;
}

GeneralizabilitySplit generalizability_split(const std::vector<ExecutedRecord>& trace,
                                             const std::vector<ConcurrencyWindow>& windows,
                                             const QueryPool& pool, SplitAxis axis,
                                             const std::vector<double>& thresholds) {
    if (trace.size() != windows.size())
        throw ContractError("generalizability_split: trace and windows must be index-aligned");
    if (thresholds.empty())
        throw ConfigError("generalizability_split: at least one threshold required");
    for (std::size_t i = 1; i < thresholds.size(); ++i)
        if (!(thresholds[i - 1] < thresholds[i]))
            throw ConfigError("generalizability_split: thresholds must be strictly increasing");

    GeneralizabilitySplit out;
    std::vector<GeneralizabilitySplit::Bucket> buckets;
    for (std::size_t k = 0; k < thresholds.size(); ++k) {
        GeneralizabilitySplit::Bucket b;
        b.lo = thresholds[k];
        b.hi = (k + 1 < thresholds.size()) ? thresholds[k + 1]
                                           : std::numeric_limits<double>::infinity();
        b.label = std::isinf(b.hi) ? ">=" + format_double(b.lo)
                                   : "[" + format_double(b.lo) + "," + format_double(b.hi) + ")";
        buckets.push_back(std::move(b));
    }

    for (std::size_t i = 0; i < trace.size(); ++i) {
        double value;
        if (axis == SplitAxis::concurrency) {
            value = double(windows[i].size());
        } else {
            value = double(join_count(pool.by_id(trace[i].query_id)));
        }
        if (value < thresholds.front()) {
            out.train.push_back(i);
            continue;
        }
        for (auto& b : buckets)
            if (value >= b.lo && value < b.hi) {
                b.indices.push_back(i);
                break;
            }
    }

    for (auto& b : buckets) {
        if (b.indices.empty()) {
            std::cerr << "warning: generalizability bucket " << b.label
                      << " is empty; skipping\n";
            continue;
        }
        out.test_buckets.push_back(std::move(b));
    }
    return out;
}

std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

}  // namespace iconq
