#include "iconq/function_model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <set>
#include <sstream>

#include "iconq/rng.hpp"
#include "json.hpp"

namespace iconq {

using json = nlohmann::ordered_json;

void FunctionInputs::check() const {
    auto nonneg = [](double v, const char* name) {
        if (!(v >= 0.0) || !std::isfinite(v))
            throw DataError(std::string("function inputs: ") + name + " must be >= 0");
    };
    nonneg(avg_runtime, "avg_runtime");
    nonneg(sum_concurrent_avg_runtime, "sum_concurrent_avg_runtime");
    nonneg(est_scan, "est_scan");
    nonneg(max_est_card, "max_est_card");
    nonneg(avg_est_card, "avg_est_card");
    nonneg(max_est_card_concurrent, "max_est_card_concurrent");
    nonneg(avg_est_card_concurrent, "avg_est_card_concurrent");
    nonneg(avg_io_speed, "avg_io_speed");
    nonneg(memory_size, "memory_size");
    if (!(scan_sharing_percentage >= 0.0 && scan_sharing_percentage <= 1.0))
        throw DataError("function inputs: scan_sharing_percentage must be in [0, 1]");
    if (num_concurrency < 0) throw DataError("function inputs: num_concurrency must be >= 0");
    if (multi_prog_level < 1) throw DataError("function inputs: multi_prog_level must be >= 1");
}

void FunctionSystem::check() const {
    if (multi_prog_level < 1) throw ConfigError("function system: multi_prog_level must be >= 1");
    if (!(avg_io_speed >= 0.0)) throw ConfigError("function system: avg_io_speed must be >= 0");
    if (!(memory_size >= 0.0)) throw ConfigError("function system: memory_size must be >= 0");
}

double predict_function(const FunctionParams& params, const FunctionInputs& in) {
    in.check();
    if (in.avg_runtime == 0.0)
        throw DataError("function predict: avg_runtime must be positive");
    const int num_running = std::min(in.num_concurrency + 1, in.multi_prog_level);
    const double running_frac =
        static_cast<double>(num_running) / static_cast<double>(in.num_concurrency + 1);
    const double queueing_time =
        params.queueing_weight * (1.0 - running_frac) * in.sum_concurrent_avg_runtime;
    const double io_speed =
        params.base_io_speed + in.avg_io_speed / static_cast<double>(num_running);
    const double io_time =
        params.card_adjustment * in.est_scan * (1.0 - in.scan_sharing_percentage) / io_speed;
    const double avg_cpu_time = in.avg_runtime - io_time;
    const double cpu_usage = running_frac * in.sum_concurrent_avg_runtime / in.avg_runtime;
    double mem_usage = 0.0;
    if (in.max_est_card_concurrent + in.max_est_card > 0.0)
        mem_usage += params.max_mem_weight * in.max_est_card /
                     (in.max_est_card_concurrent + in.max_est_card);
    if (in.avg_est_card_concurrent + in.avg_est_card > 0.0)
        mem_usage += params.avg_mem_weight * in.avg_est_card /
                     (in.avg_est_card_concurrent + in.avg_est_card);
    const double cpu_time = (1.0 + mem_usage + params.cpu_weight * cpu_usage) * avg_cpu_time;
    return std::max(0.1, queueing_time + io_time + cpu_time);
}

FunctionInputs make_function_inputs(const Query& target, std::span<const Query* const> others,
                                    const BaseRuntimePredictor& base, const FunctionSystem& sys) {
    sys.check();
    FunctionInputs in;
    in.avg_runtime = base.predict_base(target);
    in.num_concurrency = static_cast<int>(others.size());
    in.multi_prog_level = sys.multi_prog_level;
    in.avg_io_speed = sys.avg_io_speed;
    in.memory_size = sys.memory_size;

    std::set<std::string> shared_tables;
    for (const Query* o : others) {
        if (!o) throw ContractError("function inputs: null concurrent query");
        in.sum_concurrent_avg_runtime += base.predict_base(*o);
        for (const auto& [table, rows] : o->table_scans) {
            (void)rows;
            shared_tables.insert(table);
        }
    }

    double shared_rows = 0.0;
    for (const auto& [table, rows] : target.table_scans) {
        in.est_scan += rows;
        if (shared_tables.count(table)) shared_rows += rows;
    }
    in.scan_sharing_percentage = in.est_scan > 0.0 ? shared_rows / in.est_scan : 0.0;

    double sum = 0.0;
    for (const PlanOperator& op : target.operators) {
        in.max_est_card = std::max(in.max_est_card, op.est_rows);
        sum += op.est_rows;
    }
    if (!target.operators.empty()) in.avg_est_card = sum / static_cast<double>(target.operators.size());

    double csum = 0.0;
    std::size_t cops = 0;
    for (const Query* o : others)
        for (const PlanOperator& op : o->operators) {
            in.max_est_card_concurrent = std::max(in.max_est_card_concurrent, op.est_rows);
            csum += op.est_rows;
            ++cops;
        }
    if (cops > 0) in.avg_est_card_concurrent = csum / static_cast<double>(cops);
    return in;
}

std::vector<std::pair<FunctionInputs, double>> build_function_training(
    const std::vector<ExecutedRecord>& trace, const QueryPool& pool,
    const BaseRuntimePredictor& base, const FunctionSystem& sys) {
    const std::vector<ConcurrencyWindow> windows = derive_windows(trace);
    std::vector<std::pair<FunctionInputs, double>> out;
    out.reserve(windows.size());
    for (const ConcurrencyWindow& w : windows) {
        const ExecutedRecord& rec = trace[static_cast<std::size_t>(w.target_record)];
        std::vector<const Query*> others;
        for (const WindowMember& m : w.members)
            if (m.record != w.target_record) others.push_back(&pool.by_id(m.query_id));
        out.emplace_back(make_function_inputs(pool.by_id(rec.query_id), others, base, sys),
                         rec.system_runtime);
    }
    return out;
}

namespace {

FunctionParams params_from_point(const std::vector<double>& x) {
    FunctionParams p;
    p.queueing_weight = x[0];
    p.base_io_speed = std::exp(x[1]);  // positivity by construction
    p.card_adjustment = x[2];
    p.max_mem_weight = x[3];
    p.avg_mem_weight = x[4];
    p.cpu_weight = x[5];
    return p;
}

// Classic Nelder–Mead downhill simplex; deterministic for a fixed start.
std::pair<std::vector<double>, double> nelder_mead(
    const std::function<double(const std::vector<double>&)>& f, std::vector<double> x0,
    double step, int max_iters) {
    const std::size_t n = x0.size();
    struct Vertex {
        std::vector<double> x;
        double fx;
    };
    std::vector<Vertex> simplex;
    simplex.push_back({x0, f(x0)});
    for (std::size_t d = 0; d < n; ++d) {
        std::vector<double> x = x0;
        x[d] += step * std::max(1.0, std::abs(x0[d]));
        simplex.push_back({x, f(x)});
    }
    auto by_value = [](const Vertex& a, const Vertex& b) { return a.fx < b.fx; };
    for (int it = 0; it < max_iters; ++it) {
        std::sort(simplex.begin(), simplex.end(), by_value);
        if (simplex.back().fx - simplex.front().fx < 1e-12) break;
        std::vector<double> centroid(n, 0.0);
        for (std::size_t v = 0; v < n; ++v)
            for (std::size_t d = 0; d < n; ++d) centroid[d] += simplex[v].x[d];
        for (std::size_t d = 0; d < n; ++d) centroid[d] /= static_cast<double>(n);

        auto blend = [&](double coef) {
            std::vector<double> x(n);
            for (std::size_t d = 0; d < n; ++d)
                x[d] = centroid[d] + coef * (simplex.back().x[d] - centroid[d]);
            return x;
        };
        const std::vector<double> refl = blend(-1.0);
        const double f_refl = f(refl);
        if (f_refl < simplex.front().fx) {
            const std::vector<double> expa = blend(-2.0);
            const double f_expa = f(expa);
            if (f_expa < f_refl)
                simplex.back() = {expa, f_expa};
            else
                simplex.back() = {refl, f_refl};
        } else if (f_refl < simplex[n - 1].fx) {
            simplex.back() = {refl, f_refl};
        } else {
            const std::vector<double> contr = blend(f_refl < simplex.back().fx ? -0.5 : 0.5);
            const double f_contr = f(contr);
            if (f_contr < std::min(f_refl, simplex.back().fx)) {
                simplex.back() = {contr, f_contr};
            } else {
                for (std::size_t v = 1; v <= n; ++v) {
                    for (std::size_t d = 0; d < n; ++d)
                        simplex[v].x[d] =
                            simplex[0].x[d] + 0.5 * (simplex[v].x[d] - simplex[0].x[d]);
                    simplex[v].fx = f(simplex[v].x);
                }
            }
        }
    }
    std::sort(simplex.begin(), simplex.end(), by_value);
    return {simplex.front().x, simplex.front().fx};
}

}  // namespace

FunctionFit fit_function_params(std::span<const std::pair<FunctionInputs, double>> training,
                                std::uint64_t seed) {
    if (training.size() < 6)
        throw DataError("function fit: need at least 6 samples, got " +
                        std::to_string(training.size()));
    for (const auto& [in, label] : training) {
        in.check();
        if (!(label > 0.0)) throw DataError("function fit: non-positive label");
    }

    const auto objective = [&](const std::vector<double>& x) {
        const FunctionParams p = params_from_point(x);
        double total = 0.0;
        for (const auto& [in, label] : training) {
            const double pred = predict_function(p, in);
            const double e = std::log(pred) - std::log(label);
            total += e * e;
        }
        return total / static_cast<double>(training.size());
    };

    double lo = training[0].second, hi = training[0].second;
    for (const auto& [in, label] : training) {
        (void)in;
        lo = std::min(lo, label);
        hi = std::max(hi, label);
    }

    Rng rng(seed);
    std::vector<double> best_x;
    double best_f = std::numeric_limits<double>::infinity();
    for (int start = 0; start < 16; ++start) {
        std::vector<double> x0(6);
        if (start == 0) {
            // Neutral start: no queueing, mild io, multipliers off.
            x0 = {0.1, 0.0, 0.1, 0.1, 0.1, 0.1};
        } else {
            x0[0] = rng.uniform(0.0, 2.0);
            x0[1] = rng.uniform(-4.0, 12.0);
            x0[2] = rng.uniform(0.0, 2.0);
            x0[3] = rng.uniform(0.0, 2.0);
            x0[4] = rng.uniform(0.0, 2.0);
            x0[5] = rng.uniform(0.0, 2.0);
        }
        auto [x, fx] = nelder_mead(objective, x0, 0.25, 400);
        if (fx < best_f) {
            best_f = fx;
            best_x = x;
        }
    }

    FunctionFit fit;
    fit.params = params_from_point(best_x);
    fit.objective = best_f;
    fit.degenerate = hi - lo <= 1e-12 * std::max(1.0, hi);
    return fit;
}

// ---------------------------------------------------------------------------

namespace {

json params_to_json(const FunctionParams& p) {
    return {{"queueing_weight", p.queueing_weight}, {"base_io_speed", p.base_io_speed},
            {"card_adjustment", p.card_adjustment}, {"max_mem_weight", p.max_mem_weight},
            {"avg_mem_weight", p.avg_mem_weight},   {"cpu_weight", p.cpu_weight}};
}

FunctionParams params_from_json(const json& j) {
    FunctionParams p;
    p.queueing_weight = j.at("queueing_weight").get<double>();
    p.base_io_speed = j.at("base_io_speed").get<double>();
    p.card_adjustment = j.at("card_adjustment").get<double>();
    p.max_mem_weight = j.at("max_mem_weight").get<double>();
    p.avg_mem_weight = j.at("avg_mem_weight").get<double>();
    p.cpu_weight = j.at("cpu_weight").get<double>();
    if (!(p.base_io_speed > 0.0)) throw DataError("function checkpoint: base_io_speed must be > 0");
    return p;
}

}  // namespace

std::string FunctionBundle::to_json_string() const {
    json j;
    j["kind"] = "function";
    j["params"] = params_to_json(params);
    j["system"] = {{"multi_prog_level", system.multi_prog_level},
                   {"avg_io_speed", system.avg_io_speed},
                   {"memory_size", system.memory_size}};
    j["stage"] = json::parse(stage.to_json_string());
    return j.dump();
}

FunctionBundle FunctionBundle::from_json_string(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw DataError(std::string("function checkpoint: bad JSON: ") + e.what());
    }
    try {
        if (j.at("kind").get<std::string>() != "function")
            throw DataError("function checkpoint: wrong kind");
        FunctionBundle b{StageModel::from_json_string(j.at("stage").dump()),
                         params_from_json(j.at("params")),
                         FunctionSystem{j.at("system").at("multi_prog_level").get<int>(),
                                        j.at("system").at("avg_io_speed").get<double>(),
                                        j.at("system").at("memory_size").get<double>()}};
        b.system.check();
        return b;
    } catch (const json::exception& e) {
        throw DataError(std::string("function checkpoint: ") + e.what());
    }
}

void FunctionBundle::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("function checkpoint: cannot open " + path + " for writing");
    out << to_json_string() << '\n';
    if (!out) throw DataError("function checkpoint: write failed for " + path);
}

FunctionBundle FunctionBundle::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("function checkpoint: cannot open " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    return from_json_string(buf.str());
}

FunctionPredictor::FunctionPredictor(const StageModel& stage, const FunctionParams& params,
                                     const FunctionSystem& sys)
    : stage_(stage), params_(params), sys_(sys) {
    sys_.check();
}

FunctionPredictor::FunctionPredictor(const FunctionBundle& bundle)
    : FunctionPredictor(bundle.stage, bundle.params, bundle.system) {}

double FunctionPredictor::predict_incoming(const Query& incoming,
                                           std::span<const RunningQueryView> running,
                                           double when) {
    (void)when;
    std::vector<const Query*> others;
    others.reserve(running.size());
    for (const RunningQueryView& v : running) others.push_back(v.query);
    return predict_function(params_, make_function_inputs(incoming, others, stage_, sys_));
}

double FunctionPredictor::predict_running(std::size_t target,
                                          std::span<const RunningQueryView> running, double now) {
    (void)now;
    if (target >= running.size())
        throw ContractError("function predictor: target index out of range");
    std::vector<const Query*> others;
    for (std::size_t i = 0; i < running.size(); ++i)
        if (i != target) others.push_back(running[i].query);
    return predict_function(params_, make_function_inputs(*running[target].query, others, stage_, sys_));
}

double FunctionPredictor::predict_running_with_new(std::size_t target,
                                                   std::span<const RunningQueryView> running,
                                                   const Query& incoming, double when) {
    (void)when;
    if (target >= running.size())
        throw ContractError("function predictor: target index out of range");
    std::vector<const Query*> others;
    for (std::size_t i = 0; i < running.size(); ++i)
        if (i != target) others.push_back(running[i].query);
    others.push_back(&incoming);
    return predict_function(params_, make_function_inputs(*running[target].query, others, stage_, sys_));
}

}  // namespace iconq
