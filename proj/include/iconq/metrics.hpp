#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "iconq/workload.hpp"

namespace iconq {

// Relative error of a runtime prediction, always >= 1 (1 = exact). Both
// values are floored at 0.1 s first; anything still non-positive (NaN) is a
// data error.
double q_error(double pred, double truth);

// Nearest-rank percentile summary. An empty sample keeps count 0 and NaN
// statistics so downstream reports stay well defined.
struct Percentiles {
    std::size_t count = 0;
    double mean = 0.0;
    double p50 = 0.0;
    double p90 = 0.0;
    double p95 = 0.0;
};

Percentiles percentiles_of(std::vector<double> values);

// Distribution of the three per-query time spans over a trace, plus the same
// restricted to queries that ran concurrently (window size > 1).
struct MetricsSummary {
    std::size_t count = 0;
    std::size_t concurrent_count = 0;
    Percentiles e2e;
    Percentiles system_runtime;
    Percentiles queueing;
    Percentiles e2e_concurrent;
    Percentiles system_concurrent;
    Percentiles queueing_concurrent;
};

// `windows` must be index-aligned with `trace` (one window per record, as
// derive_windows produces).
MetricsSummary summarize(const std::vector<ExecutedRecord>& trace,
                         const std::vector<ConcurrencyWindow>& windows);

// Q-error and absolute-error distributions of one predictor over paired
// (prediction, measured) samples.
struct ErrorSummary {
    Percentiles q;
    Percentiles abs;
};

ErrorSummary prediction_errors(std::span<const double> predictions,
                               std::span<const double> truths);

// Relative gain of `ours` over `baseline`: (baseline - ours) / baseline.
// Positive means `ours` is better (smaller). Baseline must be positive.
double improvement(double baseline, double ours);

enum class SplitAxis { concurrency, joins };

// Partition of trace indices for generalization studies: train takes records
// whose axis value lies below the first threshold; each test bucket covers
// [t_k, t_{k+1}) with the last bucket open-ended. The axis value is the
// concurrency-window size or the query's join-operator count. Empty buckets
// are dropped with a warning on stderr.
struct GeneralizabilitySplit {
    struct Bucket {
        std::string label;
        double lo = 0.0;
        double hi = 0.0;  // +inf for the last bucket
        std::vector<std::size_t> indices;
    };
    std::vector<std::size_t> train;
    std::vector<Bucket> test_buckets;
};

GeneralizabilitySplit generalizability_split(const std::vector<ExecutedRecord>& trace,
                                             const std::vector<ConcurrencyWindow>& windows,
                                             const QueryPool& pool, SplitAxis axis,
                                             const std::vector<double>& thresholds);

// Shortest round-trip decimal form, for byte-stable CSV output.
std::string format_double(double v);

}  // namespace iconq
