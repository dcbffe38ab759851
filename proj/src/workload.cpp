#include "iconq/workload.hpp"

#include <algorithm>
#include <cmath>

#include "iconq/rng.hpp"

namespace iconq {

namespace {

const char* const kOpKindNames[kOpKindCount] = {
    "seq_scan",  "index_scan", "bitmap_heap_scan", "hash_join", "merge_join",
    "nested_loop", "sort",     "hash",             "aggregate", "group_aggregate",
    "materialize", "gather",   "append",           "limit",     "window_agg",
};

}  // namespace

const char* op_kind_name(OpKind k) {
    int i = static_cast<int>(k);
    if (i < 0 || i >= kOpKindCount) throw ContractError("op_kind_name: invalid kind");
    return kOpKindNames[i];
}

OpKind op_kind_from_name(const std::string& name) {
    for (int i = 0; i < kOpKindCount; ++i)
        if (name == kOpKindNames[i]) return static_cast<OpKind>(i);
    throw DataError("unknown operator kind: '" + name + "'");
}

bool op_kind_is_join(OpKind k) {
    return k == OpKind::hash_join || k == OpKind::merge_join || k == OpKind::nested_loop;
}

QueryPool::QueryPool(std::vector<Query> queries) : queries_(std::move(queries)) {
    for (std::size_t i = 0; i < queries_.size(); ++i) {
        auto [it, fresh] = index_.emplace(queries_[i].query_id, i);
        if (!fresh) throw DataError("duplicate query_id in pool: " + std::to_string(queries_[i].query_id));
    }
}

const Query& QueryPool::by_id(QueryId id) const {
    auto it = index_.find(id);
    if (it == index_.end()) throw DataError("query_id not in pool: " + std::to_string(id));
    return queries_[it->second];
}

PoolConfig PoolConfig::from_kv(KvConfig& kv) {
    PoolConfig c;
    c.size = kv.get_int("size", c.size);
    c.templates = kv.get_int("templates", c.templates);
    c.catalog_tables = kv.get_int("catalog_tables", c.catalog_tables);
    c.runtime_body_mu = kv.get_double("runtime_body_mu", c.runtime_body_mu);
    c.runtime_body_sigma = kv.get_double("runtime_body_sigma", c.runtime_body_sigma);
    c.tail_fraction = kv.get_double("tail_fraction", c.tail_fraction);
    c.tail_scale = kv.get_double("tail_scale", c.tail_scale);
    c.tail_shape = kv.get_double("tail_shape", c.tail_shape);
    c.runtime_min = kv.get_double("runtime_min", c.runtime_min);
    c.runtime_max = kv.get_double("runtime_max", c.runtime_max);
    c.mem_heavy_fraction = kv.get_double("mem_heavy_fraction", c.mem_heavy_fraction);
    c.io_heavy_fraction = kv.get_double("io_heavy_fraction", c.io_heavy_fraction);
    c.feature_noise = kv.get_double("feature_noise", c.feature_noise);
    c.rows_per_second = kv.get_double("rows_per_second", c.rows_per_second);
    c.rows_per_capacity = kv.get_double("rows_per_capacity", c.rows_per_capacity);
    c.check();
    return c;
}

void PoolConfig::check() const {
    if (size <= 0) throw ConfigError("pool config: size must be > 0");
    if (templates <= 0) throw ConfigError("pool config: templates must be > 0");
    if (catalog_tables <= 0) throw ConfigError("pool config: catalog_tables must be > 0");
    if (runtime_min <= 0 || runtime_max < runtime_min)
        throw ConfigError("pool config: need 0 < runtime_min <= runtime_max");
    if (tail_fraction < 0 || tail_fraction > 1)
        throw ConfigError("pool config: tail_fraction must be in [0, 1]");
    if (mem_heavy_fraction < 0 || mem_heavy_fraction > 1 || io_heavy_fraction < 0 ||
        io_heavy_fraction > 1)
        throw ConfigError("pool config: class fractions must be in [0, 1]");
    if (rows_per_second <= 0 || rows_per_capacity <= 0)
        throw ConfigError("pool config: row scales must be > 0");
}

ArrivalConfig ArrivalConfig::from_kv(KvConfig& kv) {
    ArrivalConfig c;
    c.duration_s = kv.get_double("duration_s", c.duration_s);
    c.base_rate_per_s = kv.get_double("base_rate_per_s", c.base_rate_per_s);
    c.diurnal_amplitude = kv.get_double("diurnal_amplitude", c.diurnal_amplitude);
    c.diurnal_period_s = kv.get_double("diurnal_period_s", c.diurnal_period_s);
    c.diurnal_phase = kv.get_double("diurnal_phase", c.diurnal_phase);
    c.spike_rate_per_hour = kv.get_double("spike_rate_per_hour", c.spike_rate_per_hour);
    c.spike_width_s = kv.get_double("spike_width_s", c.spike_width_s);
    c.spike_size_mean = kv.get_double("spike_size_mean", c.spike_size_mean);
    c.check();
    return c;
}

void ArrivalConfig::check() const {
    if (duration_s <= 0) throw ConfigError("arrival config: duration_s must be > 0");
    if (base_rate_per_s <= 0) throw ConfigError("arrival config: base_rate_per_s must be > 0");
    if (diurnal_amplitude < 0 || diurnal_amplitude >= 1)
        throw ConfigError("arrival config: diurnal_amplitude must be in [0, 1)");
    if (diurnal_period_s <= 0) throw ConfigError("arrival config: diurnal_period_s must be > 0");
    if (spike_rate_per_hour < 0 || spike_width_s < 0 || spike_size_mean < 0)
        throw ConfigError("arrival config: spike parameters must be >= 0");
}

namespace {

enum class TemplateClass { cpu_heavy, io_heavy, mem_heavy };

struct Template {
    TemplateClass cls;
    std::vector<std::string> tables;        // catalog table names
    std::vector<double> table_weights;      // row split across tables, sums to 1
    std::vector<OpKind> extra_ops;          // beyond scans and joins
    double io_base;
    double rows_per_second;                 // template scan throughput
};

std::string table_name(std::int64_t i) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "t%02lld", static_cast<long long>(i));
    return buf;
}

double draw_runtime(const PoolConfig& cfg, Rng& rng) {
    double t;
    if (rng.uniform01() < cfg.tail_fraction) {
        t = rng.pareto(cfg.tail_scale, cfg.tail_shape);
    } else {
        t = rng.lognormal(cfg.runtime_body_mu, cfg.runtime_body_sigma);
    }
    return std::min(std::max(t, cfg.runtime_min), cfg.runtime_max);
}

std::vector<Template> make_templates(const PoolConfig& cfg, Rng& rng) {
    std::vector<Template> out;
    out.reserve(std::size_t(cfg.templates));
    const OpKind extras_pool[] = {OpKind::sort,        OpKind::aggregate, OpKind::group_aggregate,
                                  OpKind::materialize, OpKind::gather,    OpKind::limit,
                                  OpKind::window_agg,  OpKind::append};
    for (std::int64_t t = 0; t < cfg.templates; ++t) {
        Template tpl;
        double u = rng.uniform01();
        if (u < cfg.mem_heavy_fraction)
            tpl.cls = TemplateClass::mem_heavy;
        else if (u < cfg.mem_heavy_fraction + cfg.io_heavy_fraction)
            tpl.cls = TemplateClass::io_heavy;
        else
            tpl.cls = TemplateClass::cpu_heavy;

        std::int64_t n_tables = rng.uniform_int(2, 4);
        // Skew table choice toward low indices so scans share tables often.
        std::vector<std::int64_t> chosen;
        while (std::int64_t(chosen.size()) < n_tables) {
            double v = rng.uniform01();
            auto idx = std::int64_t(v * v * double(cfg.catalog_tables));
            if (idx >= cfg.catalog_tables) idx = cfg.catalog_tables - 1;
            if (std::find(chosen.begin(), chosen.end(), idx) == chosen.end()) chosen.push_back(idx);
        }
        double wsum = 0;
        for (std::int64_t i : chosen) {
            tpl.tables.push_back(table_name(i));
            double w = rng.uniform(0.2, 1.0);
            tpl.table_weights.push_back(w);
            wsum += w;
        }
        for (double& w : tpl.table_weights) w /= wsum;

        std::int64_t n_extra = rng.uniform_int(1, 3);
        for (std::int64_t i = 0; i < n_extra; ++i)
            tpl.extra_ops.push_back(extras_pool[std::size_t(rng.uniform_int(0, 7))]);

        switch (tpl.cls) {
            case TemplateClass::cpu_heavy: tpl.io_base = rng.uniform(0.10, 0.30); break;
            case TemplateClass::io_heavy: tpl.io_base = rng.uniform(0.70, 0.90); break;
            case TemplateClass::mem_heavy: tpl.io_base = rng.uniform(0.55, 0.80); break;
        }
        tpl.rows_per_second = cfg.rows_per_second * rng.uniform(0.5, 2.0);
        out.push_back(std::move(tpl));
    }
    return out;
}

}  // namespace

QueryPool generate_pool(const PoolConfig& cfg, std::uint64_t seed) {
    cfg.check();
    Rng root(seed);
    Rng tpl_rng = root.fork(1);
    Rng q_rng = root.fork(2);
    std::vector<Template> templates = make_templates(cfg, tpl_rng);

    std::vector<Query> queries;
    queries.reserve(std::size_t(cfg.size));
    for (std::int64_t qi = 0; qi < cfg.size; ++qi) {
        const std::int64_t tid = qi % cfg.templates;
        const Template& tpl = templates[std::size_t(tid)];
        Query q;
        q.query_id = qi;
        q.template_id = tid;

        double runtime = draw_runtime(cfg, q_rng);
        q.profile.base_runtime = runtime;
        q.profile.io_fraction =
            std::min(0.95, std::max(0.05, tpl.io_base + 0.05 * q_rng.normal()));
        q.profile.scan_tables = tpl.tables;

        switch (tpl.cls) {
            case TemplateClass::mem_heavy: q.profile.mem_demand = q_rng.uniform(0.50, 0.90); break;
            default: q.profile.mem_demand = q_rng.uniform(0.02, 0.15); break;
        }

        // Plan features carry the runtime signal: scanned rows scale with the
        // isolated runtime up to template throughput and multiplicative noise.
        double total_rows =
            runtime * tpl.rows_per_second * std::exp(cfg.feature_noise * q_rng.normal());
        for (std::size_t i = 0; i < tpl.tables.size(); ++i) {
            double rows = total_rows * tpl.table_weights[i];
            q.table_scans[tpl.tables[i]] = rows;
            q.operators.push_back({OpKind::seq_scan, rows});
        }
        // Joins over the scanned tables; hash size encodes memory demand.
        double hash_rows = q.profile.mem_demand * cfg.rows_per_capacity *
                           std::exp(0.05 * q_rng.normal());
        for (std::size_t i = 0; i + 1 < tpl.tables.size(); ++i) {
            OpKind join = tpl.cls == TemplateClass::mem_heavy
                              ? OpKind::hash_join
                              : (i % 2 == 0 ? OpKind::merge_join : OpKind::nested_loop);
            q.operators.push_back({join, total_rows * 0.5});
            if (join == OpKind::hash_join)
                q.operators.push_back({OpKind::hash, hash_rows});
        }
        if (tpl.cls != TemplateClass::mem_heavy)
            q.operators.push_back({OpKind::hash, hash_rows});
        for (OpKind k : tpl.extra_ops)
            q.operators.push_back({k, total_rows * q_rng.uniform(0.05, 0.4)});

        queries.push_back(std::move(q));
    }
    return QueryPool(std::move(queries));
}

std::vector<ArrivalEvent> generate_arrivals(const QueryPool& pool, const ArrivalConfig& cfg,
                                            std::uint64_t seed) {
    cfg.check();
    if (pool.size() == 0) throw ContractError("generate_arrivals: empty pool");
    Rng root(seed);
    Rng time_rng = root.fork(1);
    Rng spike_rng = root.fork(2);
    Rng pick_rng = root.fork(3);

    std::vector<double> times;
    // Thinning against the diurnal envelope.
    const double lam_max = cfg.base_rate_per_s * (1.0 + cfg.diurnal_amplitude);
    double t = 0.0;
    while (true) {
        t += time_rng.exponential(lam_max);
        if (t >= cfg.duration_s) break;
        double lam = cfg.base_rate_per_s *
                     (1.0 + cfg.diurnal_amplitude *
                                std::sin(2.0 * M_PI * t / cfg.diurnal_period_s + cfg.diurnal_phase));
        if (time_rng.uniform01() * lam_max < lam) times.push_back(t);
    }
    // Spike bursts on top.
    if (cfg.spike_rate_per_hour > 0 && cfg.spike_size_mean > 0) {
        double s = 0.0;
        const double spike_rate = cfg.spike_rate_per_hour / 3600.0;
        while (true) {
            s += spike_rng.exponential(spike_rate);
            if (s >= cfg.duration_s) break;
            auto burst = std::int64_t(std::floor(spike_rng.exponential(1.0 / cfg.spike_size_mean))) + 1;
            for (std::int64_t i = 0; i < burst; ++i) {
                double a = s + spike_rng.uniform01() * cfg.spike_width_s;
                if (a < cfg.duration_s) times.push_back(a);
            }
        }
    }
    std::sort(times.begin(), times.end());

    std::vector<ArrivalEvent> out;
    out.reserve(times.size());
    for (double a : times) {
        auto idx = std::size_t(pick_rng.uniform_int(0, std::int64_t(pool.size()) - 1));
        out.push_back({pool.queries()[idx].query_id, a});
    }
    return out;
}

void validate_trace(const std::vector<ExecutedRecord>& trace) {
    for (std::size_t i = 0; i < trace.size(); ++i) {
        const ExecutedRecord& r = trace[i];
        if (!(r.system_runtime > 0))
            throw DataError("trace record " + std::to_string(i) + ": system_runtime must be > 0");
        if (r.submit_time + 1e-9 < r.arrival_time)
            throw DataError("trace record " + std::to_string(i) + ": submit before arrival");
        double expect = r.submit_time + r.system_runtime;
        double tol = 1e-9 * std::max({1.0, std::abs(expect), std::abs(r.finish_time)});
        if (std::abs(r.finish_time - expect) > tol)
            throw DataError("trace record " + std::to_string(i) +
                            ": finish_time != submit_time + system_runtime");
    }
}

std::vector<ConcurrencyWindow> derive_windows(const std::vector<ExecutedRecord>& trace) {
    validate_trace(trace);
    const std::size_t n = trace.size();

    // Sweep over interval endpoints; active set gives overlaps in
    // O(n log n + sum of window sizes).
    struct Endpoint {
        double time;
        int kind;  // 0 = start (before end at equal time would be wrong: half-open, so end first)
        std::size_t rec;
    };
    std::vector<Endpoint> eps;
    eps.reserve(2 * n);
    for (std::size_t i = 0; i < n; ++i) {
        eps.push_back({trace[i].submit_time, 1, i});
        eps.push_back({trace[i].finish_time, 0, i});
    }
    std::sort(eps.begin(), eps.end(), [&](const Endpoint& a, const Endpoint& b) {
        if (a.time != b.time) return a.time < b.time;
        if (a.kind != b.kind) return a.kind < b.kind;  // finish before start: touching != overlap
        if (trace[a.rec].query_id != trace[b.rec].query_id)
            return trace[a.rec].query_id < trace[b.rec].query_id;
        return a.rec < b.rec;
    });

    std::vector<std::vector<std::size_t>> overlaps(n);
    std::vector<std::size_t> active;
    for (const Endpoint& e : eps) {
        if (e.kind == 1) {
            for (std::size_t other : active) {
                overlaps[other].push_back(e.rec);
                overlaps[e.rec].push_back(other);
            }
            active.push_back(e.rec);
        } else {
            active.erase(std::find(active.begin(), active.end(), e.rec));
        }
    }

    std::vector<ConcurrencyWindow> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        ConcurrencyWindow w;
        w.target_record = RecordKey(i);
        overlaps[i].push_back(i);
        std::sort(overlaps[i].begin(), overlaps[i].end(), [&](std::size_t a, std::size_t b) {
            if (trace[a].submit_time != trace[b].submit_time)
                return trace[a].submit_time < trace[b].submit_time;
            if (trace[a].query_id != trace[b].query_id) return trace[a].query_id < trace[b].query_id;
            return a < b;
        });
        w.members.reserve(overlaps[i].size());
        for (std::size_t m : overlaps[i]) {
            w.members.push_back({RecordKey(m), trace[m].query_id, trace[m].submit_time});
            if (m == i) w.target_pos = w.members.size() - 1;
        }
        out.push_back(std::move(w));
    }
    return out;
}

std::vector<std::string> catalog_from_pool(const QueryPool& pool, std::size_t n) {
    std::map<std::string, double> totals;
    for (const Query& q : pool.queries())
        for (const auto& [table, rows] : q.table_scans) totals[table] += rows;
    std::vector<std::pair<std::string, double>> items(totals.begin(), totals.end());
    std::sort(items.begin(), items.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    if (items.size() > n) items.resize(n);
    std::vector<std::string> out;
    out.reserve(items.size());
    for (auto& [name, rows] : items) out.push_back(name);
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace iconq
