#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "iconq/predictor.hpp"
#include "iconq/stage.hpp"
#include "iconq/workload.hpp"

namespace iconq {

// Inputs to the closed-form concurrent-runtime formula, all describing one
// target query next to a set of concurrently running queries.
struct FunctionInputs {
    double avg_runtime = 0.0;                  // target's isolated estimate, seconds
    double sum_concurrent_avg_runtime = 0.0;   // sum of the others' isolated estimates
    double est_scan = 0.0;                     // target's total estimated scanned rows
    double scan_sharing_percentage = 0.0;      // fraction of est_scan in shared tables
    double max_est_card = 0.0;                 // over the target's operators
    double avg_est_card = 0.0;
    double max_est_card_concurrent = 0.0;      // over the others' operators pooled
    double avg_est_card_concurrent = 0.0;
    double avg_io_speed = 0.0;                 // rows per second, system constant
    double memory_size = 0.0;                  // rows-equivalent, system constant
    int num_concurrency = 0;                   // others, not counting the target
    int multi_prog_level = 1;

    void check() const;
};

struct FunctionParams {
    double queueing_weight = 0.0;
    double base_io_speed = 1.0;  // > 0
    double card_adjustment = 0.0;
    double max_mem_weight = 0.0;
    double avg_mem_weight = 0.0;
    double cpu_weight = 0.0;
};

struct FunctionFit {
    FunctionParams params;
    double objective = 0.0;  // mean squared log error at the optimum
    bool degenerate = false; // all training labels were identical
};

// Closed-form runtime estimate; strictly positive (floored at 0.1 s).
double predict_function(const FunctionParams& params, const FunctionInputs& in);

// System-wide constants the formula needs alongside per-query inputs.
struct FunctionSystem {
    int multi_prog_level = 12;
    double avg_io_speed = 1.0e5;
    double memory_size = 5.0e6;

    void check() const;
};

FunctionInputs make_function_inputs(const Query& target, std::span<const Query* const> others,
                                    const BaseRuntimePredictor& base, const FunctionSystem& sys);

// One (inputs, measured runtime) pair per executed record, others taken from
// the record's concurrency window.
std::vector<std::pair<FunctionInputs, double>> build_function_training(
    const std::vector<ExecutedRecord>& trace, const QueryPool& pool,
    const BaseRuntimePredictor& base, const FunctionSystem& sys);

// Derivative-free multi-start fit minimizing mean squared log error.
// Requires at least 6 samples (one per parameter).
FunctionFit fit_function_params(std::span<const std::pair<FunctionInputs, double>> training,
                                std::uint64_t seed);

// Stage model + fitted formula, stored together on disk.
struct FunctionBundle {
    StageModel stage;
    FunctionParams params;
    FunctionSystem system;

    std::string to_json_string() const;
    static FunctionBundle from_json_string(const std::string& text);
    void save(const std::string& path) const;
    static FunctionBundle load(const std::string& path);
};

class FunctionPredictor : public ConcurrentRuntimePredictor {
public:
    FunctionPredictor(const StageModel& stage, const FunctionParams& params,
                      const FunctionSystem& sys);
    explicit FunctionPredictor(const FunctionBundle& bundle);

    double predict_incoming(const Query& incoming, std::span<const RunningQueryView> running,
                            double when) override;
    double predict_running(std::size_t target, std::span<const RunningQueryView> running,
                           double now) override;
    double predict_running_with_new(std::size_t target,
                                    std::span<const RunningQueryView> running,
                                    const Query& incoming, double when) override;

private:
    const StageModel& stage_;
    FunctionParams params_;
    FunctionSystem sys_;
};

}  // namespace iconq
