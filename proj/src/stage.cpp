#include "iconq/stage.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "json.hpp"

namespace iconq {

using ordered_json = nlohmann::ordered_json;

StageHp StageHp::from_kv(KvConfig& kv) {
    StageHp hp;
    hp.rounds = int(kv.get_int("rounds", hp.rounds));
    hp.depth = int(kv.get_int("depth", hp.depth));
    hp.learning_rate = kv.get_double("learning_rate", hp.learning_rate);
    hp.min_leaf = int(kv.get_int("min_leaf", hp.min_leaf));
    hp.linear_fallback_below = int(kv.get_int("linear_fallback_below", hp.linear_fallback_below));
    hp.check();
    return hp;
}

void StageHp::check() const {
    if (rounds <= 0) throw ConfigError("stage hp: rounds must be > 0");
    if (depth <= 0) throw ConfigError("stage hp: depth must be > 0");
    if (learning_rate <= 0 || learning_rate > 1)
        throw ConfigError("stage hp: learning_rate must be in (0, 1]");
    if (min_leaf < 1) throw ConfigError("stage hp: min_leaf must be >= 1");
    if (linear_fallback_below < 1) throw ConfigError("stage hp: linear_fallback_below must be >= 1");
}

double StageModel::Tree::eval(const std::vector<double>& x) const {
    int i = 0;
    while (nodes[std::size_t(i)].feature >= 0) {
        const TreeNode& n = nodes[std::size_t(i)];
        i = x[std::size_t(n.feature)] <= n.threshold ? n.left : n.right;
    }
    return nodes[std::size_t(i)].value;
}

std::vector<double> StageModel::plan_features(const Query& q,
                                              const std::vector<std::string>& catalog,
                                              const FeatureConfig& cfg) {
    // The per-query vector minus its runtime slot: counts, rows, table rows.
    std::vector<double> full = featurize_query(q, 0.0, catalog, cfg);
    return std::vector<double>(full.begin() + 1, full.end());
}

namespace {

struct TreeBuilder {
    const std::vector<std::vector<double>>& xs;
    const std::vector<double>& residuals;
    int max_depth;
    int min_leaf;
    std::vector<StageModel::TreeNode> nodes;

    int build(std::vector<std::size_t>& idx, int depth) {
        double sum = 0;
        for (std::size_t i : idx) sum += residuals[i];
        double mean = sum / double(idx.size());

        auto make_leaf = [&]() {
            StageModel::TreeNode leaf;
            leaf.feature = -1;
            leaf.value = mean;
            nodes.push_back(leaf);
            return int(nodes.size()) - 1;
        };
        if (depth >= max_depth || idx.size() < 2 * std::size_t(min_leaf)) return make_leaf();

        const std::size_t n_features = xs[0].size();
        int best_feature = -1;
        double best_threshold = 0, best_gain = 1e-12;
        double total_sq = 0;
        for (std::size_t i : idx) total_sq += residuals[i] * residuals[i];
        double parent_sse = total_sq - sum * sum / double(idx.size());

        std::vector<std::size_t> order(idx);
        for (std::size_t f = 0; f < n_features; ++f) {
            std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
                if (xs[a][f] != xs[b][f]) return xs[a][f] < xs[b][f];
                return a < b;
            });
            double left_sum = 0;
            for (std::size_t k = 0; k + 1 < order.size(); ++k) {
                left_sum += residuals[order[k]];
                if (xs[order[k]][f] == xs[order[k + 1]][f]) continue;  // not a boundary
                std::size_t nl = k + 1, nr = order.size() - nl;
                if (nl < std::size_t(min_leaf) || nr < std::size_t(min_leaf)) continue;
                double right_sum = sum - left_sum;
                double children_sse =
                    total_sq - left_sum * left_sum / double(nl) - right_sum * right_sum / double(nr);
                double gain = parent_sse - children_sse;
                double threshold = 0.5 * (xs[order[k]][f] + xs[order[k + 1]][f]);
                if (gain > best_gain + 1e-12 ||
                    (std::abs(gain - best_gain) <= 1e-12 && best_feature >= 0 &&
                     (int(f) < best_feature ||
                      (int(f) == best_feature && threshold < best_threshold)))) {
                    best_feature = int(f);
                    best_threshold = threshold;
                    best_gain = gain;
                }
            }
        }
        if (best_feature < 0) return make_leaf();

        std::vector<std::size_t> left, right;
        for (std::size_t i : idx)
            (xs[i][std::size_t(best_feature)] <= best_threshold ? left : right).push_back(i);

        StageModel::TreeNode split;
        split.feature = best_feature;
        split.threshold = best_threshold;
        nodes.push_back(split);
        int self = int(nodes.size()) - 1;
        nodes[std::size_t(self)].left = build(left, depth + 1);
        nodes[std::size_t(self)].right = build(right, depth + 1);
        return self;
    }
};

// Ridge fit of w in y ~ [1, x] via normal equations with Gaussian elimination.
std::vector<double> ridge_fit(const std::vector<std::vector<double>>& xs,
                              const std::vector<double>& ys, double lambda) {
    const std::size_t d = xs[0].size() + 1;
    std::vector<std::vector<double>> a(d, std::vector<double>(d, 0.0));
    std::vector<double> b(d, 0.0);
    for (std::size_t i = 0; i < xs.size(); ++i) {
        std::vector<double> row(d);
        row[0] = 1.0;
        for (std::size_t j = 0; j < xs[i].size(); ++j) row[j + 1] = xs[i][j];
        for (std::size_t p = 0; p < d; ++p) {
            b[p] += row[p] * ys[i];
            for (std::size_t q = 0; q < d; ++q) a[p][q] += row[p] * row[q];
        }
    }
    for (std::size_t p = 1; p < d; ++p) a[p][p] += lambda;

    for (std::size_t col = 0; col < d; ++col) {
        std::size_t pivot = col;
        for (std::size_t r = col + 1; r < d; ++r)
            if (std::abs(a[r][col]) > std::abs(a[pivot][col])) pivot = r;
        std::swap(a[col], a[pivot]);
        std::swap(b[col], b[pivot]);
        double diag = a[col][col];
        if (std::abs(diag) < 1e-12) continue;  // column is degenerate; weight stays 0
        for (std::size_t r = 0; r < d; ++r) {
            if (r == col) continue;
            double factor = a[r][col] / diag;
            for (std::size_t c = col; c < d; ++c) a[r][c] -= factor * a[col][c];
            b[r] -= factor * b[col];
        }
    }
    std::vector<double> w(d, 0.0);
    for (std::size_t p = 0; p < d; ++p)
        w[p] = std::abs(a[p][p]) < 1e-12 ? 0.0 : b[p] / a[p][p];
    return w;
}

std::vector<double> log1p_features(const std::vector<double>& x) {
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = std::log1p(std::max(0.0, x[i]));
    return out;
}

}  // namespace

StageModel StageModel::train(const std::vector<ExecutedRecord>& trace, const QueryPool& pool,
                             const StageHp& hp) {
    hp.check();
    if (trace.empty()) throw DataError("stage training: empty trace");

    std::map<QueryId, std::pair<double, std::size_t>> sums;
    for (const ExecutedRecord& r : trace) {
        if (!pool.contains(r.query_id))
            throw DataError("stage training: trace references unknown query_id " +
                            std::to_string(r.query_id));
        auto& [total, count] = sums[r.query_id];
        total += r.system_runtime;
        count += 1;
    }

    StageModel m;
    m.fcfg_ = FeatureConfig{};
    m.catalog_ = catalog_from_pool(pool, std::size_t(m.fcfg_.n_t));
    m.learning_rate_ = hp.learning_rate;

    std::vector<std::vector<double>> xs;
    std::vector<double> ys;  // log mean runtime
    xs.reserve(sums.size());
    for (const auto& [qid, acc] : sums) {
        xs.push_back(plan_features(pool.by_id(qid), m.catalog_, m.fcfg_));
        ys.push_back(std::log(acc.first / double(acc.second)));
    }

    if (xs.size() < std::size_t(hp.linear_fallback_below)) {
        m.linear_ = true;
        std::vector<std::vector<double>> lx;
        lx.reserve(xs.size());
        for (const auto& x : xs) lx.push_back(log1p_features(x));
        m.linear_weights_ = ridge_fit(lx, ys, 1e-3);
        return m;
    }

    m.base_score_ = std::accumulate(ys.begin(), ys.end(), 0.0) / double(ys.size());
    std::vector<double> current(ys.size(), m.base_score_);
    std::vector<double> residuals(ys.size());
    for (int round = 0; round < hp.rounds; ++round) {
        for (std::size_t i = 0; i < ys.size(); ++i) residuals[i] = ys[i] - current[i];
        TreeBuilder tb{xs, residuals, hp.depth, hp.min_leaf, {}};
        std::vector<std::size_t> idx(ys.size());
        std::iota(idx.begin(), idx.end(), 0);
        tb.build(idx, 0);
        Tree tree{std::move(tb.nodes)};
        for (std::size_t i = 0; i < ys.size(); ++i)
            current[i] += hp.learning_rate * tree.eval(xs[i]);
        m.trees_.push_back(std::move(tree));
    }
    return m;
}

double StageModel::score(const std::vector<double>& x) const {
    if (linear_) {
        std::vector<double> lx = log1p_features(x);
        double s = linear_weights_.empty() ? 0.0 : linear_weights_[0];
        for (std::size_t i = 0; i < lx.size() && i + 1 < linear_weights_.size(); ++i)
            s += linear_weights_[i + 1] * lx[i];
        return s;
    }
    double s = base_score_;
    for (const Tree& t : trees_) s += learning_rate_ * t.eval(x);
    return s;
}

double StageModel::predict_avg(const Query& q) const {
    double s = score(plan_features(q, catalog_, fcfg_));
    // Clamp the exponent so malformed inputs cannot overflow to inf.
    return std::exp(std::min(std::max(s, -20.0), 20.0));
}

std::string StageModel::to_json_string() const {
    ordered_json j;
    j["kind"] = "stage";
    j["n_p"] = fcfg_.n_p;
    j["n_t"] = fcfg_.n_t;
    j["catalog"] = catalog_;
    j["linear"] = linear_;
    j["base_score"] = base_score_;
    j["learning_rate"] = learning_rate_;
    j["linear_weights"] = linear_weights_;
    ordered_json trees = ordered_json::array();
    for (const Tree& t : trees_) {
        ordered_json nodes = ordered_json::array();
        for (const TreeNode& n : t.nodes)
            nodes.push_back({{"f", n.feature},
                             {"t", n.threshold},
                             {"l", n.left},
                             {"r", n.right},
                             {"v", n.value}});
        trees.push_back(std::move(nodes));
    }
    j["trees"] = std::move(trees);
    return j.dump();
}

StageModel StageModel::from_json_string(const std::string& text) {
    ordered_json j;
    try {
        j = ordered_json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("stage checkpoint: ") + e.what());
    }
    if (!j.contains("kind") || j["kind"] != "stage")
        throw DataError("stage checkpoint: wrong or missing kind");
    StageModel m;
    m.fcfg_.n_p = j.at("n_p").get<int>();
    m.fcfg_.n_t = j.at("n_t").get<int>();
    m.catalog_ = j.at("catalog").get<std::vector<std::string>>();
    m.linear_ = j.at("linear").get<bool>();
    m.base_score_ = j.at("base_score").get<double>();
    m.learning_rate_ = j.at("learning_rate").get<double>();
    m.linear_weights_ = j.at("linear_weights").get<std::vector<double>>();
    for (const auto& jt : j.at("trees")) {
        Tree t;
        for (const auto& jn : jt) {
            TreeNode n;
            n.feature = jn.at("f").get<int>();
            n.threshold = jn.at("t").get<double>();
            n.left = jn.at("l").get<int>();
            n.right = jn.at("r").get<int>();
            n.value = jn.at("v").get<double>();
            t.nodes.push_back(n);
        }
        m.trees_.push_back(std::move(t));
    }
    return m;
}

void StageModel::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open for writing: " + path);
    out << to_json_string() << '\n';
}

StageModel StageModel::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open for reading: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return from_json_string(ss.str());
}

}  // namespace iconq
