#include "iconq/qshuffler.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "iconq/rng.hpp"
#include "json.hpp"

namespace iconq {

using json = nlohmann::ordered_json;

QshufflerHp QshufflerHp::from_kv(KvConfig& kv) {
    QshufflerHp hp;
    hp.k = static_cast<int>(kv.get_int("k", hp.k));
    hp.restarts = static_cast<int>(kv.get_int("restarts", hp.restarts));
    hp.max_iters = static_cast<int>(kv.get_int("max_iters", hp.max_iters));
    hp.seed = static_cast<std::uint64_t>(kv.get_int("seed", static_cast<std::int64_t>(hp.seed)));
    hp.check();
    return hp;
}

void QshufflerHp::check() const {
    if (k < 1) throw ConfigError("qshuffler hp: k must be >= 1");
    if (restarts < 1) throw ConfigError("qshuffler hp: restarts must be >= 1");
    if (max_iters < 1) throw ConfigError("qshuffler hp: max_iters must be >= 1");
}

namespace {

double sq_dist(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

}  // namespace

std::vector<double> QshufflerModel::normalize(const std::vector<double>& qfv) const {
    if (qfv.size() != feat_mean_.size())
        throw ContractError("qshuffler: feature vector has dimension " +
                            std::to_string(qfv.size()) + ", expected " +
                            std::to_string(feat_mean_.size()));
    std::vector<double> out(qfv.size());
    for (std::size_t i = 0; i < qfv.size(); ++i) out[i] = (qfv[i] - feat_mean_[i]) / feat_sd_[i];
    return out;
}

int QshufflerModel::cluster_of(const std::vector<double>& qfv) const {
    const std::vector<double> x = normalize(qfv);
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < centroids_.size(); ++c) {
        const double d = sq_dist(x, centroids_[c]);
        if (d < best_d) {
            best_d = d;
            best = static_cast<int>(c);
        }
    }
    return best;
}

QshufflerModel QshufflerModel::train(const std::vector<ExecutedRecord>& trace,
                                     const QueryPool& pool, FeatureCache& cache,
                                     const QshufflerHp& hp) {
    hp.check();
    if (trace.empty()) throw DataError("qshuffler train: empty trace");

    // Distinct training queries, in id order for determinism.
    std::vector<QueryId> qids;
    for (const ExecutedRecord& r : trace) qids.push_back(r.query_id);
    std::sort(qids.begin(), qids.end());
    qids.erase(std::unique(qids.begin(), qids.end()), qids.end());
    if (static_cast<std::size_t>(hp.k) > qids.size())
        throw DataError("qshuffler train: k exceeds the distinct query count");

    std::vector<std::vector<double>> raw;
    raw.reserve(qids.size());
    for (QueryId id : qids) raw.push_back(cache.qfv(pool.by_id(id)));

    QshufflerModel model;
    const std::size_t dim = raw[0].size();
    model.feat_mean_.assign(dim, 0.0);
    model.feat_sd_.assign(dim, 0.0);
    for (const auto& v : raw)
        for (std::size_t i = 0; i < dim; ++i) model.feat_mean_[i] += v[i];
    for (std::size_t i = 0; i < dim; ++i) model.feat_mean_[i] /= static_cast<double>(raw.size());
    for (const auto& v : raw)
        for (std::size_t i = 0; i < dim; ++i) {
            const double d = v[i] - model.feat_mean_[i];
            model.feat_sd_[i] += d * d;
        }
    for (std::size_t i = 0; i < dim; ++i) {
        const double sd = std::sqrt(model.feat_sd_[i] / static_cast<double>(raw.size()));
        model.feat_sd_[i] = sd < 1e-8 ? 1.0 : sd;
    }

    std::vector<std::vector<double>> points;
    points.reserve(raw.size());
    for (const auto& v : raw) points.push_back(model.normalize(v));

    // Lloyd iterations with seeded restarts; keep the lowest-inertia run.
    const std::size_t n = points.size();
    const std::size_t k = static_cast<std::size_t>(hp.k);
    Rng rng(hp.seed);
    std::vector<int> best_assign(n, 0);
    double best_inertia = std::numeric_limits<double>::infinity();
    std::vector<std::vector<double>> best_centroids;

    for (int restart = 0; restart < hp.restarts; ++restart) {
        std::vector<std::size_t> order(n);
        for (std::size_t i = 0; i < n; ++i) order[i] = i;
        for (std::size_t i = 0; i < k; ++i) {
            const std::size_t j = i + static_cast<std::size_t>(rng.uniform_int(
                                          0, static_cast<std::int64_t>(n - i) - 1));
            std::swap(order[i], order[j]);
        }
        std::vector<std::vector<double>> centroids(k);
        for (std::size_t c = 0; c < k; ++c) centroids[c] = points[order[c]];

        std::vector<int> assign(n, -1);
        for (int iter = 0; iter < hp.max_iters; ++iter) {
            bool changed = false;
            for (std::size_t i = 0; i < n; ++i) {
                int best = 0;
                double bd = std::numeric_limits<double>::infinity();
                for (std::size_t c = 0; c < k; ++c) {
                    const double d = sq_dist(points[i], centroids[c]);
                    if (d < bd) {
                        bd = d;
                        best = static_cast<int>(c);
                    }
                }
                if (assign[i] != best) {
                    assign[i] = best;
                    changed = true;
                }
            }
            if (!changed) break;
            for (std::size_t c = 0; c < k; ++c) {
                std::vector<double> mean(dim, 0.0);
                std::size_t count = 0;
                for (std::size_t i = 0; i < n; ++i)
                    if (assign[i] == static_cast<int>(c)) {
                        for (std::size_t d = 0; d < dim; ++d) mean[d] += points[i][d];
                        ++count;
                    }
                if (count > 0) {
                    for (std::size_t d = 0; d < dim; ++d) mean[d] /= static_cast<double>(count);
                    centroids[c] = std::move(mean);
                }  // empty clusters keep their previous centroid
            }
        }
        double inertia = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            inertia += sq_dist(points[i], centroids[static_cast<std::size_t>(assign[i])]);
        if (inertia < best_inertia) {
            best_inertia = inertia;
            best_centroids = centroids;
            best_assign = assign;
        }
    }
    model.centroids_ = std::move(best_centroids);
    model.inertia_ = best_inertia;

    std::map<QueryId, int> cluster_by_qid;
    for (std::size_t i = 0; i < qids.size(); ++i) cluster_by_qid[qids[i]] = best_assign[i];

    // Per-cluster and global mean runtimes.
    std::vector<double> sum(k, 0.0);
    std::vector<std::size_t> count(k, 0);
    double gsum = 0.0;
    for (const ExecutedRecord& r : trace) {
        const int c = cluster_by_qid.at(r.query_id);
        sum[static_cast<std::size_t>(c)] += r.system_runtime;
        ++count[static_cast<std::size_t>(c)];
        gsum += r.system_runtime;
    }
    model.global_base_ = gsum / static_cast<double>(trace.size());
    model.cluster_base_.assign(k, model.global_base_);
    for (std::size_t c = 0; c < k; ++c)
        if (count[c] > 0) model.cluster_base_[c] = sum[c] / static_cast<double>(count[c]);

    // Interaction table keyed by the mix running at the target's submission.
    std::map<std::pair<int, std::vector<int>>, std::pair<double, std::size_t>> acc;
    const std::vector<ConcurrencyWindow> windows = derive_windows(trace);
    for (const ConcurrencyWindow& w : windows) {
        const ExecutedRecord& rec = trace[static_cast<std::size_t>(w.target_record)];
        std::vector<int> mix(k, 0);
        for (const WindowMember& m : w.members) {
            if (m.record == w.target_record) continue;
            const ExecutedRecord& other = trace[static_cast<std::size_t>(m.record)];
            if (other.submit_time <= rec.submit_time && other.finish_time > rec.submit_time) {
                const std::size_t c = static_cast<std::size_t>(cluster_by_qid.at(other.query_id));
                mix[c] = std::min(mix[c] + 1, kCountClip);
            }
        }
        auto& slot = acc[{cluster_by_qid.at(rec.query_id), std::move(mix)}];
        slot.first += rec.system_runtime;
        slot.second += 1;
    }
    for (const auto& [key, slot] : acc)
        model.table_[key] = slot.first / static_cast<double>(slot.second);
    return model;
}

double QshufflerModel::predict(const std::vector<double>& qfv, const std::vector<int>& mix) const {
    if (centroids_.empty()) throw ContractError("qshuffler: model is untrained");
    if (mix.size() != centroids_.size())
        throw ContractError("qshuffler: mix vector must have one count per cluster");
    const int c = cluster_of(qfv);
    std::vector<int> bucket(mix.size());
    for (std::size_t i = 0; i < mix.size(); ++i) {
        if (mix[i] < 0) throw ContractError("qshuffler: negative mix count");
        bucket[i] = std::min(mix[i], kCountClip);
    }
    const auto exact = table_.find({c, bucket});
    if (exact != table_.end()) return exact->second;

    // Nearest stored bucket for this cluster by L1 distance; ties resolve to
    // the lexicographically smallest key via the map's iteration order.
    double best_d = std::numeric_limits<double>::infinity();
    double best_v = 0.0;
    bool found = false;
    for (const auto& [key, value] : table_) {
        if (key.first != c) continue;
        double d = 0.0;
        for (std::size_t i = 0; i < bucket.size(); ++i)
            d += std::abs(key.second[i] - bucket[i]);
        if (d < best_d) {
            best_d = d;
            best_v = value;
            found = true;
        }
    }
    if (found) return best_v;
    return cluster_base_[static_cast<std::size_t>(c)];
}

// ---------------------------------------------------------------------------

std::string QshufflerModel::to_json_string() const {
    json j;
    j["kind"] = "qshuffler_model";
    j["feat_mean"] = feat_mean_;
    j["feat_sd"] = feat_sd_;
    j["centroids"] = centroids_;
    j["cluster_base"] = cluster_base_;
    j["global_base"] = global_base_;
    j["inertia"] = inertia_;
    json rows = json::array();
    for (const auto& [key, value] : table_)
        rows.push_back({{"c", key.first}, {"mix", key.second}, {"v", value}});
    j["table"] = std::move(rows);
    return j.dump();
}

QshufflerModel QshufflerModel::from_json_string(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw DataError(std::string("qshuffler checkpoint: bad JSON: ") + e.what());
    }
    try {
        if (j.at("kind").get<std::string>() != "qshuffler_model")
            throw DataError("qshuffler checkpoint: wrong kind");
        QshufflerModel m;
        m.feat_mean_ = j.at("feat_mean").get<std::vector<double>>();
        m.feat_sd_ = j.at("feat_sd").get<std::vector<double>>();
        m.centroids_ = j.at("centroids").get<std::vector<std::vector<double>>>();
        m.cluster_base_ = j.at("cluster_base").get<std::vector<double>>();
        m.global_base_ = j.at("global_base").get<double>();
        m.inertia_ = j.at("inertia").get<double>();
        if (m.centroids_.empty()) throw DataError("qshuffler checkpoint: no clusters");
        for (const auto& c : m.centroids_)
            if (c.size() != m.feat_mean_.size())
                throw DataError("qshuffler checkpoint: centroid dimension mismatch");
        if (m.cluster_base_.size() != m.centroids_.size())
            throw DataError("qshuffler checkpoint: cluster base size mismatch");
        for (double s : m.feat_sd_)
            if (!(s > 0.0)) throw DataError("qshuffler checkpoint: non-positive scale");
        for (const auto& row : j.at("table")) {
            const int c = row.at("c").get<int>();
            std::vector<int> mix = row.at("mix").get<std::vector<int>>();
            if (c < 0 || static_cast<std::size_t>(c) >= m.centroids_.size() ||
                mix.size() != m.centroids_.size())
                throw DataError("qshuffler checkpoint: bad table row");
            m.table_[{c, std::move(mix)}] = row.at("v").get<double>();
        }
        return m;
    } catch (const json::exception& e) {
        throw DataError(std::string("qshuffler checkpoint: ") + e.what());
    }
}

std::string QshufflerBundle::to_json_string() const {
    json j;
    j["kind"] = "qshuffler";
    j["feature"] = {{"n_p", feature.n_p}, {"n_t", feature.n_t}};
    j["stage"] = json::parse(stage.to_json_string());
    j["model"] = json::parse(model.to_json_string());
    return j.dump();
}

QshufflerBundle QshufflerBundle::from_json_string(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw DataError(std::string("qshuffler bundle: bad JSON: ") + e.what());
    }
    try {
        if (j.at("kind").get<std::string>() != "qshuffler")
            throw DataError("qshuffler bundle: wrong kind");
        QshufflerBundle b{FeatureConfig{j.at("feature").at("n_p").get<int>(),
                                        j.at("feature").at("n_t").get<int>()},
                          StageModel::from_json_string(j.at("stage").dump()),
                          QshufflerModel::from_json_string(j.at("model").dump())};
        b.feature.check();
        if (b.stage.catalog().size() > static_cast<std::size_t>(b.feature.n_t))
            throw DataError("qshuffler bundle: catalog larger than the feature layout allows");
        return b;
    } catch (const json::exception& e) {
        throw DataError(std::string("qshuffler bundle: ") + e.what());
    }
}

void QshufflerBundle::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("qshuffler bundle: cannot open " + path + " for writing");
    out << to_json_string() << '\n';
    if (!out) throw DataError("qshuffler bundle: write failed for " + path);
}

QshufflerBundle QshufflerBundle::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("qshuffler bundle: cannot open " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    return from_json_string(buf.str());
}

}  // namespace iconq
