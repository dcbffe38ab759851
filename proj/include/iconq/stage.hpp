#pragma once

#include <string>
#include <vector>

#include "iconq/config.hpp"
#include "iconq/featurizer.hpp"
#include "iconq/predictor.hpp"
#include "iconq/workload.hpp"

namespace iconq {

struct StageHp {
    int rounds = 200;
    int depth = 3;
    double learning_rate = 0.1;
    int min_leaf = 2;
    int linear_fallback_below = 50;  // sample count under which ridge replaces trees

    static StageHp from_kv(KvConfig& kv);
    void check() const;
};

// Isolated-runtime estimator over static plan features. Gradient-boosted
// regression trees fit in log-runtime space; a ridge fit takes over when the
// training set is too small for trees. Training is exact-greedy and
// deterministic: identical inputs give identical checkpoints.
class StageModel : public BaseRuntimePredictor {
public:
    struct TreeNode {
        int feature = -1;  // -1 marks a leaf
        double threshold = 0.0;
        int left = -1;
        int right = -1;
        double value = 0.0;
    };
    struct Tree {
        std::vector<TreeNode> nodes;
        double eval(const std::vector<double>& x) const;
    };

    // Labels are per-query_id means of observed system runtime.
    static StageModel train(const std::vector<ExecutedRecord>& trace, const QueryPool& pool,
                            const StageHp& hp = StageHp());

    double predict_avg(const Query& q) const;  // seconds, strictly positive
    double predict_base(const Query& q) const override { return predict_avg(q); }

    static std::vector<double> plan_features(const Query& q,
                                             const std::vector<std::string>& catalog,
                                             const FeatureConfig& cfg);

    std::string to_json_string() const;
    static StageModel from_json_string(const std::string& text);
    void save(const std::string& path) const;
    static StageModel load(const std::string& path);

    const std::vector<std::string>& catalog() const { return catalog_; }
    const FeatureConfig& feature_config() const { return fcfg_; }
    bool uses_linear_fallback() const { return linear_; }

private:
    FeatureConfig fcfg_;
    std::vector<std::string> catalog_;
    bool linear_ = false;
    double base_score_ = 0.0;               // log-space intercept
    double learning_rate_ = 0.1;
    std::vector<Tree> trees_;
    std::vector<double> linear_weights_;    // [bias, per-feature] over log1p features

    double score(const std::vector<double>& x) const;
};

}  // namespace iconq
