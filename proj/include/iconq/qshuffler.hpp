#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "iconq/config.hpp"
#include "iconq/featurizer.hpp"
#include "iconq/stage.hpp"
#include "iconq/workload.hpp"

namespace iconq {

struct QshufflerHp {
    int k = 8;
    int restarts = 50;
    int max_iters = 100;
    std::uint64_t seed = 1;

    static QshufflerHp from_kv(KvConfig& kv);
    void check() const;
};

// Cluster-based runtime predictor: queries are grouped by feature similarity
// and runtimes are looked up by (target cluster, per-cluster counts of the
// concurrently running queries). Deliberately blind to anything outside that
// count vector.
class QshufflerModel {
public:
    static QshufflerModel train(const std::vector<ExecutedRecord>& trace, const QueryPool& pool,
                                FeatureCache& cache, const QshufflerHp& hp);

    int k() const { return static_cast<int>(centroids_.size()); }
    int cluster_of(const std::vector<double>& qfv) const;

    // mix holds per-cluster counts of the other running queries (size k).
    double predict(const std::vector<double>& qfv, const std::vector<int>& mix) const;

    double inertia() const { return inertia_; }
    const std::vector<std::vector<double>>& centroids() const { return centroids_; }
    // Mean observed runtime of the cluster's training queries, seconds.
    double cluster_base(int c) const {
        if (c < 0 || static_cast<std::size_t>(c) >= cluster_base_.size())
            throw ContractError("qshuffler: cluster index out of range");
        return cluster_base_[static_cast<std::size_t>(c)];
    }

    std::string to_json_string() const;
    static QshufflerModel from_json_string(const std::string& text);

private:
    static constexpr int kCountClip = 5;  // mix counts saturate here

    std::vector<double> normalize(const std::vector<double>& qfv) const;

    std::vector<std::vector<double>> centroids_;  // k x qfv_dim, normalized space
    std::vector<double> feat_mean_;
    std::vector<double> feat_sd_;
    std::vector<double> cluster_base_;  // k, seconds
    double global_base_ = 0.0;
    double inertia_ = 0.0;
    std::map<std::pair<int, std::vector<int>>, double> table_;  // mean runtimes
};

// Stage model + cluster model + the feature layout, stored together.
struct QshufflerBundle {
    FeatureConfig feature;
    StageModel stage;
    QshufflerModel model;

    std::string to_json_string() const;
    static QshufflerBundle from_json_string(const std::string& text);
    void save(const std::string& path) const;
    static QshufflerBundle load(const std::string& path);
};

}  // namespace iconq
