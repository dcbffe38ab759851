#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "iconq/config.hpp"
#include "iconq/featurizer.hpp"
#include "iconq/lstm.hpp"
#include "iconq/predictor.hpp"
#include "iconq/stage.hpp"
#include "iconq/workload.hpp"

namespace iconq {

struct IconqHp {
    int hidden = 64;
    double learning_rate = 1e-3;
    int batch_size = 32;
    int epochs = 200;
    double loss_mix = 0.5;  // weight on the relative-error term
    int patience = 20;
    double validation_fraction = 0.1;
    std::uint64_t seed = 1;

    static IconqHp from_kv(KvConfig& kv);
    void check() const;
};

// One supervised example: the interaction series of a finished execution,
// the target's position, and its measured system runtime.
struct TrainSample {
    std::vector<std::vector<double>> series;
    std::size_t target_index = 0;
    double label = 0.0;
    QueryId query_id = 0;  // grouping key for the train/validation split
};

struct TrainReport {
    double initial_loss = 0.0;
    double final_train_loss = 0.0;
    double best_validation_loss = 0.0;  // NaN when no validation split
    int epochs_run = 0;
};

// Marks which interaction-vector dimensions hold runtimes, cardinalities, or
// time gaps; those pass through log1p before standardization.
std::vector<std::uint8_t> lognorm_mask(const FeatureConfig& cfg);

// Bi-directional recurrent runtime predictor over interaction series. The
// forward recurrence reads elements [0..j], the reverse recurrence reads
// [n-1..j]; the two final states feed a two-layer head whose scalar output
// is exponentiated into seconds.
class IconqModel {
public:
    // Freshly initialized (untrained) model with identity standardization.
    static IconqModel init(const FeatureConfig& fc, const IconqHp& hp);

    static IconqModel train(std::span<const TrainSample> dataset, const FeatureConfig& fc,
                            const IconqHp& hp, TrainReport* report = nullptr);

    double predict(std::span<const std::vector<double>> series, std::size_t target_index) const;

    // Same as predict but also exposes the two final recurrent states for
    // inspection (either pointer may be null).
    double predict_with_states(std::span<const std::vector<double>> series,
                               std::size_t target_index, std::vector<double>* forward_state,
                               std::vector<double>* backward_state) const;

    struct Request {
        const std::vector<std::vector<double>>* series;
        std::size_t target_index;
    };
    std::vector<double> predict_batch(std::span<const Request> requests) const;

    // Training loss on one sample (shared by training and the gradient
    // checker).
    double sample_loss(const TrainSample& sample) const;

    // Max relative error between analytic and central-difference gradients
    // over the given flat parameter indices (all parameters if empty span is
    // replaced by the full-range overload).
    double gradient_check(const TrainSample& sample, double eps) const;
    double gradient_check(const TrainSample& sample, double eps,
                          std::span<const std::size_t> param_indices) const;

    int input_dim() const { return input_dim_; }
    int hidden_dim() const { return hidden_; }
    std::size_t parameter_count() const { return params_.size(); }

    std::string to_json_string() const;
    static IconqModel from_json_string(const std::string& text);
    void save(const std::string& path) const;
    static IconqModel load(const std::string& path);

private:
    struct Workspace;

    LstmSpec cell_spec() const { return LstmSpec{input_dim_, hidden_}; }
    std::size_t mlp_offset() const { return 2 * cell_spec().param_count(); }
    void normalize_into(const std::vector<double>& raw, double* out) const;
    // Forward/backward recurrences plus head; returns the log-space output.
    double evaluate(std::span<const std::vector<double>> series, std::size_t target_index,
                    Workspace& ws) const;
    // d(loss)/d(params) for one sample, accumulated into grad. Returns the
    // sample loss.
    double loss_and_grad(const TrainSample& sample, Workspace& ws, double* grad) const;

    int input_dim_ = 0;
    int hidden_ = 0;
    double loss_mix_ = 0.5;
    std::vector<double> mean_;
    std::vector<double> sd_;
    std::vector<std::uint8_t> log_mask_;
    std::vector<double> params_;
};

// A trained pair: the isolated-runtime model that fills the first feature
// slot plus the concurrency-aware network, with the feature layout they were
// trained under. This is the unit the command-line tools store on disk.
struct IconqBundle {
    FeatureConfig feature;
    StageModel stage;
    IconqModel model;

    std::string to_json_string() const;
    static IconqBundle from_json_string(const std::string& text);
    void save(const std::string& path) const;
    static IconqBundle load(const std::string& path);
};

// Builds one training sample per executed record: members are the queries
// whose [submit, finish) interval overlaps the target's, the label is the
// target's measured system runtime.
std::vector<TrainSample> build_training_set(const std::vector<ExecutedRecord>& trace,
                                            const QueryPool& pool, FeatureCache& cache);

// Live adapter: featurizes running sets on demand and routes the three
// prediction shapes through the network. Thread-compatible (not
// thread-safe): the scheduler drives it from one thread.
class IconqPredictor : public ConcurrentRuntimePredictor {
public:
    IconqPredictor(const FeatureConfig& fc, const StageModel& stage, const IconqModel& model);
    explicit IconqPredictor(const IconqBundle& bundle);

    double predict_incoming(const Query& incoming, std::span<const RunningQueryView> running,
                            double when) override;
    double predict_running(std::size_t target, std::span<const RunningQueryView> running,
                           double now) override;
    double predict_running_with_new(std::size_t target,
                                    std::span<const RunningQueryView> running,
                                    const Query& incoming, double when) override;

    FeatureCache& cache() { return cache_; }

private:
    Series running_series(std::span<const RunningQueryView> running, const Query* extra,
                          double extra_time, RecordKey target_record);

    const StageModel& stage_;
    const IconqModel& model_;
    FeatureCache cache_;
};

}  // namespace iconq
