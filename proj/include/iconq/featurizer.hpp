#pragma once

#include <functional>
#include <map>
#include <mutex>
#include <span>
#include <string>
#include <vector>

#include "iconq/workload.hpp"

namespace iconq {

struct FeatureConfig {
    int n_p = kOpKindCount;  // operator-kind slots
    int n_t = 20;            // catalog table slots

    int qfv_dim() const { return 1 + 2 * n_p + n_t; }
    int ifv_dim() const { return 2 * qfv_dim() + 3; }

    void check() const {
        if (n_p < 0 || n_p > kOpKindCount)
            throw ConfigError("feature config: n_p must be in [0, " +
                              std::to_string(kOpKindCount) + "]");
        if (n_t < 0) throw ConfigError("feature config: n_t must be >= 0");
    }
};

// Per-query feature vector:
//   [ runtime_feature | per-kind operator counts | per-kind summed est_rows |
//     per-catalog-table scanned rows ]
// Kinds with index >= n_p and tables outside the catalog contribute nothing.
std::vector<double> featurize_query(const Query& q, double runtime_feature,
                                    const std::vector<std::string>& catalog,
                                    const FeatureConfig& cfg);

// Pairwise vector for one series element:
//   [ other QFV | target QFV | |t_other - t_target| | 1(t_other < t_target) |
//     1(t_target < t_other) ]
// The target's own element uses other == target and zeros for all three
// timestamp features.
std::vector<double> interaction_vector(const std::vector<double>& other_qfv,
                                       const std::vector<double>& target_qfv, double t_other,
                                       double t_target, const FeatureConfig& cfg);

struct SeriesMember {
    const Query* query;
    double submit_time;
    RecordKey record;
};

struct Series {
    std::vector<std::vector<double>> x;
    std::size_t target_index;
};

// Computes each query's feature vector once. Safe for concurrent readers;
// insertions are serialized.
class FeatureCache {
public:
    FeatureCache(FeatureConfig cfg, std::vector<std::string> catalog,
                 std::function<double(const Query&)> runtime_feature);

    std::vector<double> qfv(const Query& q);
    const FeatureConfig& config() const { return cfg_; }
    const std::vector<std::string>& catalog() const { return catalog_; }

private:
    FeatureConfig cfg_;
    std::vector<std::string> catalog_;
    std::function<double(const Query&)> runtime_feature_;
    std::mutex mu_;
    std::map<QueryId, std::vector<double>> cache_;
};

// Orders members by (submit_time, query_id, record) and emits one interaction
// vector per member against the target, which must appear exactly once.
Series build_series(FeatureCache& cache, std::span<const SeriesMember> members, RecordKey target);

}  // namespace iconq
