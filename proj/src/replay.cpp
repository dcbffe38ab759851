#include "iconq/replay.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "iconq/common.hpp"
#include "json.hpp"

namespace iconq {

namespace {

struct AxisEntry {
    double base;  // isolated-runtime estimate
    QueryId query_id;
};

bool within(double predicted, double target, double tol) {
    return std::abs(predicted - target) <= tol * target;
}

}  // namespace

MatchedTrace replay_match(const std::vector<ReplayTarget>& targets, const QueryPool& pool,
                          ConcurrentRuntimePredictor& concurrent,
                          const BaseRuntimePredictor& isolated, double tol, int max_iters) {
    if (pool.queries().empty()) throw DataError("replay_match: empty pool");
    if (!(tol > 0.0)) throw ConfigError("replay_match: tol must be > 0");
    if (max_iters < 0) throw ConfigError("replay_match: max_iters must be >= 0");

    MatchedTrace out;
    if (targets.empty()) {
        out.matched_fraction = 1.0;
        return out;
    }
    for (const ReplayTarget& t : targets) {
        if (!(t.target_runtime > 0.0))
            throw DataError("replay_match: target runtimes must be positive");
    }

    // The swap axis: pool queries ordered by isolated-runtime estimate.
    std::vector<AxisEntry> axis;
    axis.reserve(pool.queries().size());
    for (const Query& q : pool.queries())
        axis.push_back({isolated.predict_base(q), q.query_id});
    std::sort(axis.begin(), axis.end(), [](const AxisEntry& a, const AxisEntry& b) {
        if (a.base != b.base) return a.base < b.base;
        return a.query_id < b.query_id;
    });

    const std::size_t n = targets.size();
    std::vector<std::size_t> pos(n);   // current index on the axis
    std::vector<double> length(n);     // interval length used for windowing
    std::vector<double> predicted(n);
    std::vector<bool> matched(n);

    // Pass 0: nearest isolated estimate (ties to the shorter query).
    for (std::size_t i = 0; i < n; ++i) {
        const double want = targets[i].target_runtime;
        std::size_t best = 0;
        double best_gap = std::abs(axis[0].base - want);
        for (std::size_t k = 1; k < axis.size(); ++k) {
            const double gap = std::abs(axis[k].base - want);
            if (gap < best_gap) {
                best = k;
                best_gap = gap;
            }
        }
        pos[i] = best;
        length[i] = axis[best].base;
        predicted[i] = axis[best].base;
        matched[i] = within(predicted[i], want, tol);
    }

    for (int it = 1; it <= max_iters; ++it) {
        // Hypothetical schedule: every slot occupies [arrival, arrival + length).
        std::vector<double> finish(n);
        for (std::size_t i = 0; i < n; ++i)
            finish[i] = targets[i].arrival_time + std::max(length[i], 1e-9);

        bool all = true;
        for (std::size_t i = 0; i < n; ++i) {
            std::vector<RunningQueryView> others;
            for (std::size_t j = 0; j < n; ++j) {
                if (j == i) continue;
                const bool overlaps = targets[j].arrival_time < finish[i] &&
                                      targets[i].arrival_time < finish[j];
                if (overlaps)
                    others.push_back({&pool.by_id(axis[pos[j]].query_id),
                                      targets[j].arrival_time, RecordKey(j)});
            }
            predicted[i] = concurrent.predict_incoming(pool.by_id(axis[pos[i]].query_id), others,
                                                       targets[i].arrival_time);
            matched[i] = within(predicted[i], targets[i].target_runtime, tol);
            if (!matched[i]) all = false;
        }

        std::size_t hit = 0;
        for (std::size_t i = 0; i < n; ++i)
            if (matched[i]) ++hit;
        out.fraction_history.push_back(double(hit) / double(n));
        out.iterations = it;

        if (all) break;
        if (it == max_iters) break;

        for (std::size_t i = 0; i < n; ++i) {
            if (matched[i]) {
                length[i] = predicted[i];
                continue;
            }
            if (predicted[i] < targets[i].target_runtime) {
                if (pos[i] + 1 < axis.size()) pos[i] += 1;
            } else {
                if (pos[i] > 0) pos[i] -= 1;
            }
            length[i] = axis[pos[i]].base;
        }
    }

    out.slots.reserve(n);
    std::size_t hit = 0;
    for (std::size_t i = 0; i < n; ++i) {
        out.slots.push_back({targets[i].arrival_time, targets[i].target_runtime,
                             axis[pos[i]].query_id, predicted[i], matched[i]});
        if (matched[i]) ++hit;
    }
    out.matched_fraction = double(hit) / double(n);
    return out;
}

void write_matched(const MatchedTrace& m, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("write_matched: cannot open " + path);
    for (const MatchedSlot& s : m.slots) {
        nlohmann::ordered_json row;
        row["arrival_time"] = s.arrival_time;
        row["target_runtime"] = s.target_runtime;
        row["query_id"] = s.query_id;
        row["predicted_runtime"] = s.predicted_runtime;
        row["matched"] = s.matched;
        f << row.dump() << '\n';
    }
    if (!f) throw DataError("write_matched: write failed for " + path);
}

}  // namespace iconq
