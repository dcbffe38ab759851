#include "iconq/featurizer.hpp"

#include <algorithm>
#include <cmath>

namespace iconq {

std::vector<double> featurize_query(const Query& q, double runtime_feature,
                                    const std::vector<std::string>& catalog,
                                    const FeatureConfig& cfg) {
    cfg.check();
    if (int(catalog.size()) > cfg.n_t)
        throw ContractError("featurize_query: catalog larger than n_t slots");
    if (!std::isfinite(runtime_feature) || runtime_feature < 0)
        throw ContractError("featurize_query: runtime_feature must be finite and >= 0");
    std::vector<double> v(std::size_t(cfg.qfv_dim()), 0.0);
    v[0] = runtime_feature;
    for (const PlanOperator& op : q.operators) {
        int k = static_cast<int>(op.kind);
        if (k >= cfg.n_p) continue;
        v[std::size_t(1 + k)] += 1.0;
        v[std::size_t(1 + cfg.n_p + k)] += op.est_rows;
    }
    for (std::size_t t = 0; t < catalog.size(); ++t) {
        auto it = q.table_scans.find(catalog[t]);
        if (it != q.table_scans.end()) v[std::size_t(1 + 2 * cfg.n_p) + t] = it->second;
    }
    return v;
}

std::vector<double> interaction_vector(const std::vector<double>& other_qfv,
                                       const std::vector<double>& target_qfv, double t_other,
                                       double t_target, const FeatureConfig& cfg) {
    if (int(other_qfv.size()) != cfg.qfv_dim() || int(target_qfv.size()) != cfg.qfv_dim())
        throw ContractError("interaction_vector: feature vector length mismatch");
    std::vector<double> v;
    v.reserve(std::size_t(cfg.ifv_dim()));
    v.insert(v.end(), other_qfv.begin(), other_qfv.end());
    v.insert(v.end(), target_qfv.begin(), target_qfv.end());
    v.push_back(std::abs(t_other - t_target));
    v.push_back(t_other < t_target ? 1.0 : 0.0);
    v.push_back(t_target < t_other ? 1.0 : 0.0);
    return v;
}

FeatureCache::FeatureCache(FeatureConfig cfg, std::vector<std::string> catalog,
                           std::function<double(const Query&)> runtime_feature)
    : cfg_(cfg), catalog_(std::move(catalog)), runtime_feature_(std::move(runtime_feature)) {
    cfg_.check();
    if (!runtime_feature_) throw ContractError("FeatureCache: runtime_feature required");
}

std::vector<double> FeatureCache::qfv(const Query& q) {
    {
        std::lock_guard<std::mutex> lock(mu_);
        auto it = cache_.find(q.query_id);
        if (it != cache_.end()) return it->second;
    }
    std::vector<double> v = featurize_query(q, runtime_feature_(q), catalog_, cfg_);
    std::lock_guard<std::mutex> lock(mu_);
    return cache_.emplace(q.query_id, std::move(v)).first->second;
}

Series build_series(FeatureCache& cache, std::span<const SeriesMember> members, RecordKey target) {
    std::vector<const SeriesMember*> order;
    order.reserve(members.size());
    for (const SeriesMember& m : members) order.push_back(&m);
    std::sort(order.begin(), order.end(), [](const SeriesMember* a, const SeriesMember* b) {
        if (a->submit_time != b->submit_time) return a->submit_time < b->submit_time;
        if (a->query->query_id != b->query->query_id)
            return a->query->query_id < b->query->query_id;
        return a->record < b->record;
    });

    const SeriesMember* target_member = nullptr;
    std::size_t target_index = 0;
    for (std::size_t i = 0; i < order.size(); ++i) {
        if (order[i]->record == target) {
            if (target_member) throw ContractError("build_series: target appears more than once");
            target_member = order[i];
            target_index = i;
        }
    }
    if (!target_member) throw ContractError("build_series: target not among members");

    std::vector<double> target_qfv = cache.qfv(*target_member->query);
    Series s;
    s.target_index = target_index;
    s.x.reserve(order.size());
    for (const SeriesMember* m : order) {
        if (m == target_member) {
            s.x.push_back(interaction_vector(target_qfv, target_qfv, 0.0, 0.0, cache.config()));
        } else {
            s.x.push_back(interaction_vector(cache.qfv(*m->query), target_qfv, m->submit_time,
                                             target_member->submit_time, cache.config()));
        }
    }
    return s;
}

}  // namespace iconq
