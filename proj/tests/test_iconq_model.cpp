#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <vector>

#include "doctest.h"
#include "iconq/iconq_model.hpp"
#include "iconq/oracle.hpp"
#include "iconq/rng.hpp"
#include "nlohmann/json.hpp"

using namespace iconq;

namespace {

// Deterministic pseudo-random series unrelated to the model's own generator.
std::vector<std::vector<double>> synth_series(int n, int dim, double phase) {
    std::vector<std::vector<double>> x(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        x[static_cast<std::size_t>(i)].resize(static_cast<std::size_t>(dim));
        for (int d = 0; d < dim; ++d)
            x[static_cast<std::size_t>(i)][static_cast<std::size_t>(d)] =
                0.8 * std::sin(phase + 1.3 * i + 0.7 * d) + 0.1 * d;
    }
    return x;
}

TrainSample synth_sample(int n, int dim, double phase, double label, QueryId qid) {
    TrainSample s;
    s.series = synth_series(n, dim, phase);
    s.target_index = static_cast<std::size_t>(n - 1) / 2;
    s.label = label;
    s.query_id = qid;
    return s;
}

// Straight-line reference for the bi-directional recurrence + head, written
// independently of the library implementation.
struct RefNet {
    int d, h;
    std::vector<double> p;  // same flat layout as the checkpoint

    static double sig(double v) { return 1.0 / (1.0 + std::exp(-v)); }

    std::vector<double> run_dir(const std::vector<const std::vector<double>*>& xs,
                                std::size_t base) const {
        std::vector<double> hh(static_cast<std::size_t>(h), 0.0);
        std::vector<double> cc(static_cast<std::size_t>(h), 0.0);
        const double* w = p.data() + base;
        const double* u = w + static_cast<std::size_t>(4 * h) * d;
        const double* b = u + static_cast<std::size_t>(4 * h) * h;
        for (const auto* x : xs) {
            std::vector<double> z(static_cast<std::size_t>(4 * h));
            for (int r = 0; r < 4 * h; ++r) {
                double acc = b[r];
                for (int k = 0; k < d; ++k)
                    acc += w[static_cast<std::size_t>(r) * d + k] * (*x)[static_cast<std::size_t>(k)];
                for (int k = 0; k < h; ++k)
                    acc += u[static_cast<std::size_t>(r) * h + k] * hh[static_cast<std::size_t>(k)];
                z[static_cast<std::size_t>(r)] = acc;
            }
            for (int k = 0; k < h; ++k) {
                const double gi = sig(z[static_cast<std::size_t>(k)]);
                const double gf = sig(z[static_cast<std::size_t>(h + k)]);
                const double gc = std::tanh(z[static_cast<std::size_t>(2 * h + k)]);
                const double go = sig(z[static_cast<std::size_t>(3 * h + k)]);
                cc[static_cast<std::size_t>(k)] = gf * cc[static_cast<std::size_t>(k)] + gi * gc;
                hh[static_cast<std::size_t>(k)] = go * std::tanh(cc[static_cast<std::size_t>(k)]);
            }
        }
        return hh;
    }

    double predict(const std::vector<std::vector<double>>& series, std::size_t j) const {
        const std::size_t cell = static_cast<std::size_t>(4 * h) * d +
                                 static_cast<std::size_t>(4 * h) * h +
                                 static_cast<std::size_t>(4 * h);
        std::vector<const std::vector<double>*> fwd, bwd;
        for (std::size_t i = 0; i <= j; ++i) fwd.push_back(&series[i]);
        for (std::size_t i = series.size(); i-- > j;) bwd.push_back(&series[i]);
        const std::vector<double> hf = run_dir(fwd, 0);
        const std::vector<double> hb = run_dir(bwd, cell);
        std::vector<double> cat = hf;
        cat.insert(cat.end(), hb.begin(), hb.end());
        const double* w1 = p.data() + 2 * cell;
        const double* b1 = w1 + static_cast<std::size_t>(h) * 2 * h;
        const double* w2 = b1 + h;
        const double* b2 = w2 + h;
        double out = *b2;
        for (int r = 0; r < h; ++r) {
            double acc = b1[r];
            for (int c = 0; c < 2 * h; ++c)
                acc += w1[static_cast<std::size_t>(r) * 2 * h + c] * cat[static_cast<std::size_t>(c)];
            out += w2[r] * std::tanh(acc);
        }
        return std::exp(out);
    }
};

IconqModel model_from_params(int dim, int hidden, const std::vector<double>& params) {
    nlohmann::ordered_json j;
    j["kind"] = "iconq_net";
    j["input_dim"] = dim;
    j["hidden"] = hidden;
    j["loss_mix"] = 0.5;
    j["mean"] = std::vector<double>(static_cast<std::size_t>(dim), 0.0);
    j["sd"] = std::vector<double>(static_cast<std::size_t>(dim), 1.0);
    j["log_mask"] = std::vector<int>(static_cast<std::size_t>(dim), 0);
    j["params"] = params;
    return IconqModel::from_json_string(j.dump());
}

std::string temp_path(const char* name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("prediction matches an independent reference implementation") {
    const int d = 3, h = 2;
    const std::size_t cell = static_cast<std::size_t>(4 * h) * d +
                             static_cast<std::size_t>(4 * h) * h + 4 * h;
    const std::size_t total = 2 * cell + static_cast<std::size_t>(h) * 2 * h + h + h + 1;
    std::vector<double> params(total);
    for (std::size_t i = 0; i < total; ++i)
        params[i] = 0.6 * std::sin(0.37 * static_cast<double>(i) + 0.2);

    IconqModel model = model_from_params(d, h, params);
    RefNet ref{d, h, params};

    auto series = synth_series(5, d, 0.4);
    for (std::size_t j = 0; j < series.size(); ++j) {
        const double got = model.predict(series, j);
        const double want = ref.predict(series, j);
        CHECK(got == doctest::Approx(want).epsilon(1e-12));
        CHECK(got > 0.0);
    }
    // Repeat calls are stateless.
    CHECK(model.predict(series, 2) == model.predict(series, 2));
}

TEST_CASE("length-1 series works and both passes see only the target") {
    IconqHp hp;
    hp.hidden = 6;
    hp.seed = 9;
    FeatureConfig fc{3, 2};
    IconqModel model = IconqModel::init(fc, hp);
    auto series = synth_series(1, fc.ifv_dim(), 1.7);
    std::vector<double> hf, hb;
    const double p = model.predict_with_states(series, 0, &hf, &hb);
    CHECK(p > 0.0);
    CHECK(std::isfinite(p));
    CHECK(hf.size() == 6);
    CHECK(hb.size() == 6);
}

TEST_CASE("elements after the target touch only the reverse pass and vice versa") {
    IconqHp hp;
    hp.hidden = 5;
    hp.seed = 4;
    FeatureConfig fc{3, 2};
    IconqModel model = IconqModel::init(fc, hp);
    const int dim = fc.ifv_dim();
    const std::size_t j = 2;
    auto base = synth_series(5, dim, 2.2);

    std::vector<double> hf0, hb0;
    model.predict_with_states(base, j, &hf0, &hb0);

    auto later = base;
    later[4][3] += 1.5;  // position > j
    std::vector<double> hf1, hb1;
    model.predict_with_states(later, j, &hf1, &hb1);
    CHECK(hf1 == hf0);
    CHECK(hb1 != hb0);

    auto earlier = base;
    earlier[0][3] += 1.5;  // position < j
    std::vector<double> hf2, hb2;
    model.predict_with_states(earlier, j, &hf2, &hb2);
    CHECK(hb2 == hb0);
    CHECK(hf2 != hf0);

    auto at_target = base;
    at_target[j][3] += 1.5;
    std::vector<double> hf3, hb3;
    model.predict_with_states(at_target, j, &hf3, &hb3);
    CHECK(hf3 != hf0);
    CHECK(hb3 != hb0);
}

TEST_CASE("truncating elements past the target changes the output unless it is last") {
    IconqHp hp;
    hp.hidden = 5;
    hp.seed = 12;
    FeatureConfig fc{3, 2};
    IconqModel model = IconqModel::init(fc, hp);
    auto series = synth_series(6, fc.ifv_dim(), 0.9);

    const double full = model.predict(series, 2);
    auto cut = series;
    cut.resize(3);  // target becomes the last element
    const double truncated = model.predict(cut, 2);
    CHECK(full != truncated);

    // With the target already last, dropping nothing is the identity.
    const double last_full = model.predict(series, 5);
    const double last_again = model.predict(series, 5);
    CHECK(last_full == last_again);
}

TEST_CASE("analytic gradients agree with central differences across seeds") {
    FeatureConfig fc{3, 2};
    double worst = 0.0;
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        IconqHp hp;
        hp.hidden = 4 + static_cast<int>(seed % 5);  // 4..8
        hp.seed = seed;
        IconqModel model = IconqModel::init(fc, hp);
        const int n = 1 + static_cast<int>(seed % 5);  // 1..5
        TrainSample s = synth_sample(n, fc.ifv_dim(), 0.3 * static_cast<double>(seed),
                                     1.5 + 3.7 * static_cast<double>(seed % 7), 1);
        for (const double eps : {1e-4, 1e-6}) {
            const double rel = model.gradient_check(s, eps);
            worst = std::max(worst, rel);
            CHECK(rel < 1e-4);
        }
    }
    MESSAGE("worst gradient relative error: ", worst);
}

TEST_CASE("gradient check over an empty index set is zero") {
    IconqHp hp;
    hp.hidden = 4;
    FeatureConfig fc{2, 1};
    IconqModel model = IconqModel::init(fc, hp);
    TrainSample s = synth_sample(2, fc.ifv_dim(), 0.5, 4.0, 1);
    CHECK(model.gradient_check(s, 1e-5, {}) == 0.0);
}

TEST_CASE("five samples can be memorized almost exactly") {
    FeatureConfig fc{3, 2};
    std::vector<TrainSample> data;
    const double labels[5] = {3.0, 8.0, 15.0, 30.0, 55.0};
    for (int i = 0; i < 5; ++i)
        data.push_back(synth_sample(2 + i % 3, fc.ifv_dim(), 1.1 * i, labels[i], 100 + i));

    IconqHp hp;
    hp.hidden = 16;
    hp.epochs = 400;
    hp.learning_rate = 3e-3;
    hp.batch_size = 5;
    hp.seed = 3;
    IconqModel model = IconqModel::train(data, fc, hp);

    std::vector<double> qerrs;
    for (const TrainSample& s : data) {
        const double p = model.predict(s.series, s.target_index);
        qerrs.push_back(std::max(p / s.label, s.label / p));
    }
    std::sort(qerrs.begin(), qerrs.end());
    CHECK(qerrs[2] <= 1.05);
}

TEST_CASE("training halves the loss on a small synthetic set") {
    FeatureConfig fc{3, 2};
    std::vector<TrainSample> data;
    Rng rng(77);
    for (int i = 0; i < 50; ++i) {
        // Label correlated with the series content so there is signal.
        const double phase = rng.uniform(0.0, 6.28);
        const int n = 1 + static_cast<int>(rng.uniform_int(0, 3));
        TrainSample s = synth_sample(n, fc.ifv_dim(), phase, 0.0, i);
        double strength = 0.0;
        for (const auto& v : s.series) strength += std::abs(v[0]) + std::abs(v[5]);
        s.label = 2.0 + 4.0 * strength;
        data.push_back(std::move(s));
    }
    IconqHp hp;
    hp.hidden = 12;
    hp.epochs = 300;
    hp.seed = 5;
    hp.batch_size = 16;
    TrainReport rep;
    IconqModel::train(data, fc, hp, &rep);
    CHECK(rep.initial_loss > 0.0);
    CHECK(rep.final_train_loss <= 0.5 * rep.initial_loss);
    CHECK(rep.epochs_run >= 1);
}

TEST_CASE("training is deterministic and checkpoints round-trip bit-exact") {
    FeatureConfig fc{3, 2};
    std::vector<TrainSample> data;
    for (int i = 0; i < 12; ++i)
        data.push_back(synth_sample(1 + i % 4, fc.ifv_dim(), 0.7 * i, 2.0 + i, i));
    IconqHp hp;
    hp.hidden = 8;
    hp.epochs = 25;
    hp.seed = 21;

    IconqModel a = IconqModel::train(data, fc, hp);
    IconqModel b = IconqModel::train(data, fc, hp);
    CHECK(a.to_json_string() == b.to_json_string());

    hp.seed = 22;
    IconqModel c = IconqModel::train(data, fc, hp);
    CHECK(a.to_json_string() != c.to_json_string());

    const std::string text = a.to_json_string();
    IconqModel back = IconqModel::from_json_string(text);
    CHECK(back.to_json_string() == text);
    auto probe = synth_series(4, fc.ifv_dim(), 3.3);
    CHECK(back.predict(probe, 1) == a.predict(probe, 1));

    const std::string path = temp_path("iconq_model_roundtrip.json");
    a.save(path);
    IconqModel loaded = IconqModel::load(path);
    CHECK(loaded.to_json_string() == text);
    std::remove(path.c_str());
}

TEST_CASE("bad inputs are rejected") {
    FeatureConfig fc{2, 1};
    IconqHp hp;
    hp.hidden = 4;
    IconqModel model = IconqModel::init(fc, hp);
    auto series = synth_series(3, fc.ifv_dim(), 0.1);

    CHECK_THROWS_AS(model.predict(series, 3), ContractError);
    CHECK_THROWS_AS(model.predict({}, 0), ContractError);
    auto bad = series;
    bad[1].pop_back();
    CHECK_THROWS_AS(model.predict(bad, 0), ContractError);

    std::vector<TrainSample> empty;
    CHECK_THROWS_AS(IconqModel::train(empty, fc, hp), DataError);
    TrainSample s = synth_sample(2, fc.ifv_dim(), 0.2, -1.0, 1);
    std::vector<TrainSample> one{s};
    CHECK_THROWS_AS(IconqModel::train(one, fc, hp), DataError);
    one[0].label = 5.0;
    one[0].target_index = 9;
    CHECK_THROWS_AS(IconqModel::train(one, fc, hp), DataError);
    CHECK_THROWS_AS(model.sample_loss(synth_sample(2, fc.ifv_dim(), 0.2, 0.0, 1)), DataError);

    hp.validation_fraction = 0.9;
    CHECK_THROWS_AS(hp.check(), ConfigError);
}

TEST_CASE("batched prediction equals individual calls and amortizes") {
    FeatureConfig fc;  // full-width vectors
    IconqHp hp;
    hp.hidden = 32;
    hp.seed = 2;
    IconqModel model = IconqModel::init(fc, hp);

    std::vector<std::vector<std::vector<double>>> storage;
    for (int i = 0; i < 40; ++i) storage.push_back(synth_series(1 + i % 6, fc.ifv_dim(), 0.17 * i));
    std::vector<IconqModel::Request> reqs;
    for (const auto& s : storage)
        reqs.push_back(IconqModel::Request{&s, s.size() - 1});

    const std::vector<double> batched = model.predict_batch(reqs);
    REQUIRE(batched.size() == reqs.size());
    for (std::size_t i = 0; i < reqs.size(); ++i)
        CHECK(batched[i] == model.predict(*reqs[i].series, reqs[i].target_index));

    const std::size_t half = reqs.size() / 2;
    std::vector<IconqModel::Request> first(reqs.begin(), reqs.begin() + half);
    std::vector<IconqModel::Request> second(reqs.begin() + half, reqs.end());
    std::vector<double> glued = model.predict_batch(first);
    const std::vector<double> tail = model.predict_batch(second);
    glued.insert(glued.end(), tail.begin(), tail.end());
    CHECK(glued == batched);

    std::vector<IconqModel::Request> big;
    for (int i = 0; i < 1000; ++i) big.push_back(reqs[static_cast<std::size_t>(i) % reqs.size()]);
    const auto t0 = std::chrono::steady_clock::now();
    const auto out = model.predict_batch(big);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    CHECK(out.size() == 1000);
    CHECK(secs < 1.0);
}

TEST_CASE("log-compression mask covers runtimes, row counts, and the time gap") {
    FeatureConfig fc{2, 1};  // qfv = [rt, c0, c1, r0, r1, t0] -> dim 6, ifv dim 15
    const auto mask = lognorm_mask(fc);
    REQUIRE(mask.size() == 15);
    const std::vector<std::uint8_t> want = {1, 0, 0, 1, 1, 1,   // other qfv
                                            1, 0, 0, 1, 1, 1,   // target qfv
                                            1, 0, 0};           // gap, two flags
    CHECK(std::vector<std::uint8_t>(mask.begin(), mask.end()) == want);
}

namespace {

QueryPool tiny_pool() {
    std::vector<Query> qs;
    for (int i = 0; i < 3; ++i) {
        Query q;
        q.query_id = 10 + i;
        q.template_id = i;
        q.operators = {PlanOperator{OpKind::seq_scan, 1000.0 * (i + 1)}};
        q.table_scans = {{"t" + std::to_string(i), 1000.0 * (i + 1)}};
        q.profile.base_runtime = 5.0 * (i + 1);
        q.profile.io_fraction = 0.4;
        q.profile.mem_demand = 1.0;
        q.profile.scan_tables = {"t" + std::to_string(i)};
        qs.push_back(q);
    }
    return QueryPool(qs);
}

}  // namespace

TEST_CASE("training sets mirror the overlap structure of the trace") {
    QueryPool pool = tiny_pool();
    std::vector<ExecutedRecord> trace = {
        {10, 0.0, 0.0, 10.0, 10.0},
        {11, 2.0, 2.0, 8.0, 6.0},
        {12, 20.0, 20.0, 25.0, 5.0},
    };
    FeatureConfig fc{3, 2};
    FeatureCache cache(fc, {"t0", "t1"}, [](const Query& q) { return q.profile.base_runtime; });
    const auto samples = build_training_set(trace, pool, cache);
    REQUIRE(samples.size() == 3);
    CHECK(samples[0].series.size() == 2);
    CHECK(samples[0].label == 10.0);
    CHECK(samples[0].query_id == 10);
    CHECK(samples[0].target_index == 0);
    CHECK(samples[1].series.size() == 2);
    CHECK(samples[1].label == 6.0);
    CHECK(samples[1].target_index == 1);
    CHECK(samples[2].series.size() == 1);
    CHECK(samples[2].label == 5.0);
    for (const auto& s : samples)
        for (const auto& v : s.series) CHECK(static_cast<int>(v.size()) == fc.ifv_dim());
}

TEST_CASE("live adapter matches hand-built series and keeps the forward state") {
    QueryPool pool = tiny_pool();
    std::vector<ExecutedRecord> trace;
    for (int i = 0; i < 3; ++i) {
        const Query& q = pool.queries()[static_cast<std::size_t>(i)];
        trace.push_back({q.query_id, 0.0, 0.0, q.profile.base_runtime, q.profile.base_runtime});
    }
    StageHp shp;
    StageModel stage = StageModel::train(trace, pool, shp);
    FeatureConfig fc{kOpKindCount, static_cast<int>(stage.catalog().size())};
    IconqHp hp;
    hp.hidden = 6;
    hp.seed = 8;
    IconqModel model = IconqModel::init(fc, hp);
    IconqPredictor pred(fc, stage, model);

    const Query& qa = pool.by_id(10);
    const Query& qb = pool.by_id(11);
    const Query& qc = pool.by_id(12);

    std::vector<RunningQueryView> running = {{&qa, 1.0, 50}, {&qb, 4.0, 51}};

    // Incoming prediction equals a manual series with the newcomer last.
    FeatureCache cache(fc, stage.catalog(),
                       [&stage](const Query& q) { return stage.predict_base(q); });
    const auto qfv_a = cache.qfv(qa);
    const auto qfv_b = cache.qfv(qb);
    const auto qfv_c = cache.qfv(qc);
    std::vector<std::vector<double>> manual = {
        interaction_vector(qfv_a, qfv_c, 1.0, 9.0, fc),
        interaction_vector(qfv_b, qfv_c, 4.0, 9.0, fc),
        interaction_vector(qfv_c, qfv_c, 0.0, 0.0, fc),
    };
    CHECK(pred.predict_incoming(qc, running, 9.0) == model.predict(manual, 2));

    // An empty running set reduces to the lone self element.
    std::vector<std::vector<double>> lone = {interaction_vector(qfv_c, qfv_c, 0.0, 0.0, fc)};
    CHECK(pred.predict_incoming(qc, {}, 3.0) == model.predict(lone, 0));

    // Appending a newcomer must not disturb the target's forward state.
    std::vector<std::vector<double>> before = {
        interaction_vector(qfv_a, qfv_a, 0.0, 0.0, fc),
        interaction_vector(qfv_b, qfv_a, 4.0, 1.0, fc),
    };
    std::vector<std::vector<double>> after = before;
    after.push_back(interaction_vector(qfv_c, qfv_a, 9.0, 1.0, fc));
    std::vector<double> hf_before, hf_after, hb_before, hb_after;
    model.predict_with_states(before, 0, &hf_before, &hb_before);
    model.predict_with_states(after, 0, &hf_after, &hb_after);
    CHECK(hf_before == hf_after);
    CHECK(pred.predict_running(0, running, 9.0) == model.predict(before, 0));
    CHECK(pred.predict_running_with_new(0, running, qc, 9.0) == model.predict(after, 0));

    // A newcomer identical to the latest member equals duplicating it.
    std::vector<RunningQueryView> with_dup = {{&qa, 1.0, 50}, {&qb, 4.0, 51}, {&qb, 4.0, 99}};
    CHECK(pred.predict_running_with_new(0, running, qb, 4.0) ==
          pred.predict_running(0, with_dup, 9.0));

    CHECK_THROWS_AS(pred.predict_running(5, running, 1.0), ContractError);
}

TEST_CASE("a model trained on contended executions predicts longer runtimes under load") {
    PoolConfig pc;
    pc.size = 40;
    pc.mem_heavy_fraction = 0.8;
    pc.io_heavy_fraction = 0.1;
    pc.tail_fraction = 0.05;
    QueryPool pool = generate_pool(pc, 31);
    OracleParams params;

    std::vector<ExecutedRecord> corpus;
    for (const int clients : {1, 2, 4}) {
        const auto part = run_closed_loop(pool, clients, 1500.0, params, 500 + clients);
        corpus.insert(corpus.end(), part.begin(), part.end());
    }

    StageHp shp;
    StageModel stage = StageModel::train(corpus, pool, shp);
    FeatureConfig fc;
    FeatureCache cache(fc, stage.catalog(),
                       [&stage](const Query& q) { return stage.predict_base(q); });

    std::vector<TrainSample> data;
    for (const int clients : {1, 2, 4}) {
        const auto part = run_closed_loop(pool, clients, 1500.0, params, 500 + clients);
        const auto samples = build_training_set(part, pool, cache);
        data.insert(data.end(), samples.begin(), samples.end());
    }
    REQUIRE(data.size() > 100);

    IconqHp hp;
    hp.hidden = 16;
    hp.epochs = 60;
    hp.batch_size = 16;
    hp.seed = 11;
    IconqModel model = IconqModel::train(data, fc, hp);
    IconqPredictor pred(fc, stage, model);

    // Heavy newcomers should push predictions up for a lone running query.
    std::vector<const Query*> heavy;
    for (const Query& q : pool.queries())
        if (q.profile.mem_demand > 0.45 && q.profile.base_runtime > 8.0) heavy.push_back(&q);
    REQUIRE(heavy.size() >= 6);

    int up = 0, total = 0;
    for (std::size_t i = 0; i < heavy.size() && total < 20; ++i)
        for (std::size_t k = 0; k < heavy.size() && total < 20; ++k) {
            if (i == k) continue;
            std::vector<RunningQueryView> running = {{heavy[i], 0.0, 7}};
            const double alone = pred.predict_running(0, running, 1.0);
            const double crowded = pred.predict_running_with_new(0, running, *heavy[k], 1.0);
            ++total;
            if (crowded > alone) ++up;
        }
    REQUIRE(total == 20);
    CHECK(up >= 16);
}
