#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <unistd.h>

#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "iconq/common.hpp"
#include "iconq/json_io.hpp"
#include "iconq/oracle.hpp"
#include "iconq/replay.hpp"
#include "iconq/workload.hpp"
#include "json.hpp"

using namespace iconq;

namespace {

Query plain_query(QueryId qid, double base) {
    Query q;
    q.query_id = qid;
    q.template_id = qid;
    q.operators = {{OpKind::seq_scan, base * 1.0e4}, {OpKind::aggregate, base * 1.0e3}};
    q.table_scans["t" + std::to_string(qid)] = base * 1.0e4;
    q.profile = {base, 0.3, 0.05, {"t" + std::to_string(qid)}};
    return q;
}

QueryPool make_pool(const std::vector<std::pair<QueryId, double>>& bases) {
    std::vector<Query> qs;
    for (const auto& [qid, base] : bases) qs.push_back(plain_query(qid, base));
    return QueryPool(std::move(qs));
}

// True isolated runtimes, standing in for a trained estimator.
struct TrueBase : BaseRuntimePredictor {
    double predict_base(const Query& q) const override { return q.profile.base_runtime; }
};

// Base runtime inflated by a fixed factor per concurrent neighbor.
struct FanoutPredictor : ConcurrentRuntimePredictor {
    double per_other = 0.0;

    double predict_incoming(const Query& incoming, std::span<const RunningQueryView> running,
                            double) override {
        return incoming.profile.base_runtime * (1.0 + per_other * double(running.size()));
    }
    double predict_running(std::size_t target, std::span<const RunningQueryView> running,
                           double) override {
        return running[target].query->profile.base_runtime *
               (1.0 + per_other * double(running.size() - 1));
    }
    double predict_running_with_new(std::size_t target, std::span<const RunningQueryView> running,
                                    const Query&, double) override {
        return running[target].query->profile.base_runtime *
               (1.0 + per_other * double(running.size()));
    }
};

std::string temp_path(const std::string& name) {
    return std::string("/tmp/iconq_replay_") + name + "_" + std::to_string(::getpid());
}

}  // namespace

TEST_CASE("matching validates its inputs") {
    TrueBase base;
    FanoutPredictor pred;
    const std::vector<ReplayTarget> targets = {{0.0, 10.0}};
    CHECK_THROWS_AS(replay_match(targets, QueryPool{}, pred, base), DataError);

    const QueryPool pool = make_pool({{1, 10.0}});
    CHECK_THROWS_AS(replay_match(targets, pool, pred, base, 0.0), ConfigError);
    CHECK_THROWS_AS(replay_match(targets, pool, pred, base, -0.5), ConfigError);
    CHECK_THROWS_AS(replay_match(targets, pool, pred, base, 0.2, -1), ConfigError);
    CHECK_THROWS_AS(replay_match({{0.0, 0.0}}, pool, pred, base), DataError);
    CHECK_THROWS_AS(replay_match({{0.0, -3.0}}, pool, pred, base), DataError);

    const MatchedTrace empty = replay_match({}, pool, pred, base);
    CHECK(empty.slots.empty());
    CHECK(empty.matched_fraction == 1.0);
    CHECK(empty.iterations == 0);
    CHECK(empty.fraction_history.empty());
}

TEST_CASE("zero refinement passes give the nearest-isolated-estimate assignment") {
    const QueryPool pool = make_pool({{1, 10.0}, {2, 20.0}, {3, 40.0}});
    TrueBase base;
    FanoutPredictor pred;
    const std::vector<ReplayTarget> targets = {
        {0.0, 9.0},     // nearest 10
        {100.0, 21.0},  // nearest 20
        {200.0, 39.0},  // nearest 40
        {300.0, 15.0},  // tie between 10 and 20: the shorter query wins
    };
    const MatchedTrace m = replay_match(targets, pool, pred, base, 0.2, 0);
    CHECK(m.iterations == 0);
    CHECK(m.fraction_history.empty());
    REQUIRE(m.slots.size() == 4);
    CHECK(m.slots[0].query_id == 1);
    CHECK(m.slots[1].query_id == 2);
    CHECK(m.slots[2].query_id == 3);
    CHECK(m.slots[3].query_id == 1);
    CHECK(m.slots[0].predicted_runtime == 10.0);
    CHECK(m.slots[3].predicted_runtime == 10.0);
    // |10-9| = 1 <= 1.8 matched; |10-15| = 5 > 3 not matched.
    CHECK(m.slots[0].matched);
    CHECK(m.slots[1].matched);
    CHECK(m.slots[2].matched);
    CHECK_FALSE(m.slots[3].matched);
    CHECK(m.matched_fraction == 0.75);
}

TEST_CASE("exactly matchable isolated targets converge in one pass") {
    const QueryPool pool = make_pool({{1, 10.0}, {2, 25.0}, {3, 60.0}, {4, 140.0}});
    TrueBase base;
    FanoutPredictor pred;  // per_other 0: isolated prediction everywhere
    // Far-apart arrivals: no overlap, so the concurrent prediction is the base.
    const std::vector<ReplayTarget> targets = {
        {0.0, 10.0}, {1000.0, 25.0}, {2000.0, 60.0}, {3000.0, 140.0}};
    const MatchedTrace m = replay_match(targets, pool, pred, base, 0.2, 100);
    CHECK(m.iterations == 1);
    REQUIRE(m.fraction_history.size() == 1);
    CHECK(m.fraction_history[0] == 1.0);
    CHECK(m.matched_fraction == 1.0);
    CHECK(m.slots[0].query_id == 1);
    CHECK(m.slots[1].query_id == 2);
    CHECK(m.slots[2].query_id == 3);
    CHECK(m.slots[3].query_id == 4);
}

TEST_CASE("out-of-tolerance slots move one step along the runtime axis") {
    const QueryPool pool = make_pool({{7, 10.0}, {9, 100.0}});
    TrueBase base;
    FanoutPredictor pred;
    // Two isolated slots. The first wants 60: pass 0 assigns the 100 s query
    // (closer), the first refinement sees 100 > 60 and steps down to 10 s.
    // The second wants 14: pass 0 assigns 10 s, refinement steps up to 100 s.
    const std::vector<ReplayTarget> targets = {{0.0, 60.0}, {5000.0, 14.0}};
    const MatchedTrace m = replay_match(targets, pool, pred, base, 0.1, 2);
    CHECK(m.iterations == 2);
    CHECK(m.slots[0].query_id == 7);
    CHECK(m.slots[1].query_id == 9);
    CHECK_FALSE(m.slots[0].matched);
    CHECK_FALSE(m.slots[1].matched);
    CHECK(m.matched_fraction == 0.0);
    REQUIRE(m.fraction_history.size() == 2);
}

TEST_CASE("concurrency-aware refinement corrects for predicted interference") {
    // One query family; contention inflates runtimes by 50% per neighbor.
    // Three simultaneous slots each want 15 s; the 10 s query predicted next
    // to two neighbors gives 10 * (1 + 0.5 * 2) = 20, while the 7.5 s query
    // gives 15 exactly — reachable only through the concurrency-aware pass.
    const QueryPool pool = make_pool({{1, 7.5}, {2, 7.5}, {3, 7.5}, {4, 10.0}, {5, 10.0}, {6, 10.0}});
    TrueBase base;
    FanoutPredictor pred;
    pred.per_other = 0.5;
    const std::vector<ReplayTarget> targets = {{0.0, 15.0}, {0.0, 15.0}, {0.0, 15.0}};
    const MatchedTrace m = replay_match(targets, pool, pred, base, 0.05, 20);
    CHECK(m.matched_fraction == 1.0);
    for (const MatchedSlot& s : m.slots) {
        CHECK(s.predicted_runtime == doctest::Approx(15.0));
        CHECK(pool.by_id(s.query_id).profile.base_runtime == 7.5);
    }
}

TEST_CASE("targets drawn from real executions are matched against the engine") {
    PoolConfig cfg;
    cfg.size = 40;
    const QueryPool pool = generate_pool(cfg, 5);
    const OracleParams params;
    const std::vector<ExecutedRecord> trace = run_closed_loop(pool, 3, 1500.0, params, 9);
    REQUIRE(trace.size() >= 30);

    std::vector<ReplayTarget> targets;
    for (std::size_t i = 0; i < 30; ++i)
        targets.push_back({trace[i].submit_time, trace[i].system_runtime});

    WindowOraclePredictor oracle(params);
    TrueBase base;
    const MatchedTrace m = replay_match(targets, pool, oracle, base, 0.2, 100);
    CHECK(m.iterations >= 1);
    CHECK(m.iterations <= 100);
    CHECK(m.fraction_history.size() == std::size_t(m.iterations));
    CHECK(m.fraction_history.back() == m.matched_fraction);
    CHECK(m.matched_fraction >= 0.8);
    for (const MatchedSlot& s : m.slots) CHECK(pool.contains(s.query_id));
}

TEST_CASE("matched traces serialize one slot per line with fixed keys") {
    MatchedTrace m;
    m.slots.push_back({1.5, 20.0, 7, 19.5, true});
    m.slots.push_back({3.0, 40.0, 9, 55.0, false});
    m.matched_fraction = 0.5;
    const std::string path = temp_path("matched");
    write_matched(m, path);

    std::ifstream f(path);
    std::string line;
    std::vector<std::string> lines;
    while (std::getline(f, line)) lines.push_back(line);
    REQUIRE(lines.size() == 2);
    CHECK(lines[0].rfind("{\"arrival_time\":", 0) == 0);
    const nlohmann::json row = nlohmann::json::parse(lines[1]);
    CHECK(row["arrival_time"] == 3.0);
    CHECK(row["target_runtime"] == 40.0);
    CHECK(row["query_id"] == 9);
    CHECK(row["predicted_runtime"] == 55.0);
    CHECK(row["matched"] == false);
    std::remove(path.c_str());
}
