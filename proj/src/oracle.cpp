#include "iconq/oracle.hpp"

#include <algorithm>
#include <cmath>

#include "iconq/rng.hpp"

namespace iconq {

OracleParams OracleParams::from_kv(KvConfig& kv) {
    OracleParams p;
    p.cpu_slots = kv.get_double("cpu_slots", p.cpu_slots);
    p.io_channels = kv.get_double("io_channels", p.io_channels);
    p.mem_capacity = kv.get_double("mem_capacity", p.mem_capacity);
    p.mem_penalty = kv.get_double("mem_penalty", p.mem_penalty);
    p.share_coeff = kv.get_double("share_coeff", p.share_coeff);
    p.min_rate = kv.get_double("min_rate", p.min_rate);
    p.mpl = kv.get_int("mpl", p.mpl);
    p.check();
    return p;
}

void OracleParams::check() const {
    // Slot and channel counts below 1 would slow down even an isolated query,
    // breaking the identity that a lone query runs at rate 1.
    if (cpu_slots < 1.0) throw ConfigError("oracle params: cpu_slots must be >= 1");
    if (io_channels < 1.0) throw ConfigError("oracle params: io_channels must be >= 1");
    if (mem_capacity <= 0.0) throw ConfigError("oracle params: mem_capacity must be > 0");
    if (mem_penalty < 0.0) throw ConfigError("oracle params: mem_penalty must be >= 0");
    if (share_coeff < 0.0 || share_coeff >= 1.0)
        throw ConfigError("oracle params: share_coeff must be in [0, 1)");
    if (min_rate <= 0.0 || min_rate > 1.0)
        throw ConfigError("oracle params: min_rate must be in (0, 1]");
    if (mpl < 1) throw ConfigError("oracle params: mpl must be >= 1");
}

namespace {

struct SetLoad {
    double count = 0;
    double io_sum = 0;
    double mem_sum = 0;
};

double rate_of(const Query& q, const SetLoad& load,
               const std::vector<const Query*>& others, const OracleParams& p) {
    double cpu_slow = std::max(1.0, load.count / p.cpu_slots);
    double io_slow = std::max(1.0, load.io_sum / p.io_channels);
    double mem_pen =
        1.0 + p.mem_penalty * std::max(0.0, load.mem_sum - p.mem_capacity) / p.mem_capacity;

    double shared = 0;
    for (const std::string& table : q.profile.scan_tables) {
        for (const Query* other : others) {
            const auto& ts = other->profile.scan_tables;
            if (std::find(ts.begin(), ts.end(), table) != ts.end()) {
                shared += 1;
                break;
            }
        }
    }
    double share_gain =
        p.share_coeff * shared / std::max<double>(1.0, double(q.profile.scan_tables.size()));

    double f = q.profile.io_fraction;
    double denom = (1.0 - f) * cpu_slow + f * io_slow * mem_pen * (1.0 - share_gain);
    double rate = 1.0 / denom;
    return std::min(std::max(rate, p.min_rate), 1.0 / (1.0 - p.share_coeff));
}

}  // namespace

double progress_rate(const Query& q, const std::vector<const Query*>& running,
                     const OracleParams& params) {
    params.check();
    auto self = std::find(running.begin(), running.end(), &q);
    if (self == running.end()) throw ContractError("progress_rate: q must be a member of running");
    SetLoad load;
    for (const Query* p : running) {
        load.count += 1;
        load.io_sum += p->profile.io_fraction;
        load.mem_sum += p->profile.mem_demand;
    }
    std::vector<const Query*> others;  // everyone but one occurrence of q
    others.reserve(running.size() - 1);
    for (auto it = running.begin(); it != running.end(); ++it)
        if (it != self) others.push_back(*it);
    return rate_of(q, load, others, params);
}

namespace detail {

std::size_t EngineState::started_count() const {
    std::size_t n = 0;
    for (const EngineEntry& e : entries) n += e.started ? 1 : 0;
    return n;
}

const EngineEntry* EngineState::find(RecordKey r) const {
    for (const EngineEntry& e : entries)
        if (e.record == r) return &e;
    return nullptr;
}

std::vector<double> engine_rates(const EngineState& s, const OracleParams& p) {
    SetLoad load;
    for (const EngineEntry& e : s.entries) {
        if (!e.started) continue;
        load.count += 1;
        load.io_sum += e.query->profile.io_fraction;
        load.mem_sum += e.query->profile.mem_demand;
    }
    std::vector<double> rates(s.entries.size(), 0.0);
    std::vector<const Query*> others;
    for (std::size_t i = 0; i < s.entries.size(); ++i) {
        if (!s.entries[i].started) continue;
        others.clear();
        for (std::size_t j = 0; j < s.entries.size(); ++j)
            if (j != i && s.entries[j].started) others.push_back(s.entries[j].query);
        rates[i] = rate_of(*s.entries[i].query, load, others, p);
    }
    return rates;
}

void engine_advance(EngineState& s, const OracleParams& p, double t) {
    if (t < s.clock) throw ContractError("engine_advance: time must not go backwards");
    if (t == s.clock) return;
    std::vector<double> rates = engine_rates(s, p);
    double dt = t - s.clock;
    for (std::size_t i = 0; i < s.entries.size(); ++i) {
        if (!s.entries[i].started) continue;
        s.entries[i].remaining = std::max(0.0, s.entries[i].remaining - rates[i] * dt);
    }
    s.clock = t;
}

std::optional<std::pair<double, std::size_t>> engine_next_finish(const EngineState& s,
                                                                 const OracleParams& p) {
    std::vector<double> rates = engine_rates(s, p);
    std::optional<std::pair<double, std::size_t>> best;
    for (std::size_t i = 0; i < s.entries.size(); ++i) {
        if (!s.entries[i].started) continue;
        double t = s.clock + s.entries[i].remaining / rates[i];
        if (!best || t < best->first) {
            best = {t, i};
        } else if (t == best->first) {
            const EngineEntry& a = s.entries[i];
            const EngineEntry& b = s.entries[best->second];
            if (a.query->query_id < b.query->query_id ||
                (a.query->query_id == b.query->query_id && a.record < b.record))
                best = {t, i};
        }
    }
    return best;
}

void engine_submit(EngineState& s, const OracleParams& p, const Query* q, RecordKey record,
                   double arrival, double now, bool bypass_cap) {
    EngineEntry e;
    e.query = q;
    e.record = record;
    e.arrival_time = arrival;
    e.submit_time = now;
    e.remaining = q->profile.base_runtime;
    e.started = bypass_cap || s.started_count() < std::size_t(p.mpl);
    if (!e.started) s.fifo.push_back(record);
    s.entries.push_back(e);
}

void engine_start_pending(EngineState& s, const OracleParams& p) {
    while (!s.fifo.empty() && s.started_count() < std::size_t(p.mpl)) {
        RecordKey r = s.fifo.front();
        s.fifo.pop_front();
        for (EngineEntry& e : s.entries) {
            if (e.record == r) {
                e.started = true;
                break;
            }
        }
    }
}

EngineEntry engine_pop_finished(EngineState& s, std::size_t idx) {
    EngineEntry e = s.entries[idx];
    s.entries.erase(s.entries.begin() + std::ptrdiff_t(idx));
    return e;
}

}  // namespace detail

Simulation::Simulation(const QueryPool& pool, const OracleParams& params, AdmissionPolicy& policy)
    : pool_(pool), params_(params), policy_(policy) {
    params_.check();
    policy_.attach(*this);
}

void Simulation::push_arrival(double time, QueryId qid, int client) {
    pending_.push_back({time, qid, arrival_seq_++, client});
    std::push_heap(pending_.begin(), pending_.end(), [](const PendingArrival& a, const PendingArrival& b) {
        if (a.time != b.time) return a.time > b.time;
        return a.seq > b.seq;
    });
}

std::vector<ExecutedRecord> Simulation::run(const std::vector<ArrivalEvent>& arrivals) {
    for (const ArrivalEvent& a : arrivals) {
        if (!pool_.contains(a.query_id))
            throw DataError("arrival references unknown query_id " + std::to_string(a.query_id));
        push_arrival(a.arrival_time, a.query_id, -1);
    }
    return drive(0.0, nullptr, 0.0);
}

std::vector<ExecutedRecord> Simulation::run_closed_loop(int clients, double duration,
                                                        std::uint64_t seed) {
    if (clients <= 0) throw ContractError("run_closed_loop: clients must be > 0");
    if (duration <= 0) throw ContractError("run_closed_loop: duration must be > 0");
    Rng root(seed);
    std::vector<Rng> rngs;
    rngs.reserve(std::size_t(clients));
    for (int c = 0; c < clients; ++c) rngs.push_back(root.fork(std::uint64_t(c)));
    for (int c = 0; c < clients; ++c) {
        auto idx = std::size_t(rngs[std::size_t(c)].uniform_int(0, std::int64_t(pool_.size()) - 1));
        push_arrival(0.0, pool_.queries()[idx].query_id, c);
    }
    return drive(duration, &rngs, duration);
}

std::vector<ExecutedRecord> Simulation::drive(double issue_horizon, std::vector<Rng>* client_rngs,
                                              double duration) {
    auto heap_less = [](const PendingArrival& a, const PendingArrival& b) {
        if (a.time != b.time) return a.time > b.time;
        return a.seq > b.seq;
    };
    while (true) {
        auto nf = detail::engine_next_finish(state_, params_);
        bool have_arrival = !pending_.empty();
        double t_arr = have_arrival ? pending_.front().time : 0.0;

        if (!nf && !have_arrival) break;

        // Equal-time ties: finishes drain before arrivals, and internal
        // releases happen after both (see the start_pending call below).
        if (nf && (!have_arrival || nf->first <= t_arr)) {
            detail::engine_advance(state_, params_, nf->first);
            state_.entries[nf->second].remaining = 0.0;
            detail::EngineEntry e = detail::engine_pop_finished(state_, nf->second);
            ExecutedRecord rec;
            rec.query_id = e.query->query_id;
            rec.arrival_time = e.arrival_time;
            rec.submit_time = e.submit_time;
            rec.finish_time = state_.clock;
            rec.system_runtime = state_.clock - e.submit_time;
            records_.push_back(rec);
            policy_.on_finish(e.record, state_.clock);
            if (client_rngs && e.record >= 0 && std::size_t(e.record) < client_of_.size()) {
                int client = client_of_[std::size_t(e.record)];
                if (client >= 0 && state_.clock < issue_horizon) {
                    Rng& rng = (*client_rngs)[std::size_t(client)];
                    auto idx = std::size_t(rng.uniform_int(0, std::int64_t(pool_.size()) - 1));
                    push_arrival(state_.clock, pool_.queries()[idx].query_id, client);
                }
            }
        } else {
            detail::engine_advance(state_, params_, t_arr);
            std::pop_heap(pending_.begin(), pending_.end(), heap_less);
            PendingArrival a = pending_.back();
            pending_.pop_back();
            ArrivalInstance inst;
            inst.record = RecordKey(instances_.size());
            inst.query = &pool_.by_id(a.query_id);
            inst.arrival_time = a.time;
            instances_.push_back(inst);
            client_of_.push_back(a.client);
            policy_.on_arrival(inst);
        }

        while (auto r = policy_.next_submission(state_.clock)) {
            if (*r < 0 || std::size_t(*r) >= instances_.size())
                throw ContractError("policy submitted unknown record");
            const ArrivalInstance& inst = instances_[std::size_t(*r)];
            detail::engine_submit(state_, params_, inst.query, inst.record, inst.arrival_time,
                                  state_.clock, policy_.bypass_internal_cap());
            policy_.on_submitted(inst.record, state_.clock);
        }
        detail::engine_start_pending(state_, params_);
    }

    if (!state_.entries.empty() || !state_.fifo.empty())
        throw ContractError("simulation ended with unfinished queries (policy withheld submissions?)");

    std::vector<ExecutedRecord> out = std::move(records_);
    records_.clear();
    if (client_rngs) {
        std::vector<ExecutedRecord> kept;
        kept.reserve(out.size());
        for (const ExecutedRecord& r : out)
            if (r.finish_time <= duration) kept.push_back(r);
        return kept;
    }
    return out;
}

std::vector<ExecutedRecord> simulate(const QueryPool& pool, const std::vector<ArrivalEvent>& arrivals,
                                     AdmissionPolicy& policy, const OracleParams& params) {
    Simulation sim(pool, params, policy);
    return sim.run(arrivals);
}

std::vector<ExecutedRecord> run_closed_loop(const QueryPool& pool, int clients, double duration,
                                            const OracleParams& params, std::uint64_t seed) {
    NativeFifoPolicy native;
    return run_closed_loop(pool, clients, duration, params, seed, native);
}

std::vector<ExecutedRecord> run_closed_loop(const QueryPool& pool, int clients, double duration,
                                            const OracleParams& params, std::uint64_t seed,
                                            AdmissionPolicy& policy) {
    Simulation sim(pool, params, policy);
    return sim.run_closed_loop(clients, duration, seed);
}

std::optional<RecordKey> NativeFifoPolicy::next_submission(double) {
    if (queue_.empty()) return std::nullopt;
    RecordKey r = queue_.front();
    queue_.pop_front();
    return r;
}

namespace {
constexpr RecordKey kInjectedRecord = -100;
}

double OracleLivePredictor::finish_of(detail::EngineState st, RecordKey target, const Query* inject,
                                      double inject_at) const {
    if (!sim_) throw ContractError("OracleLivePredictor: not bound to a simulation");
    const OracleParams& p = sim_->params();
    bool injected = inject == nullptr;
    while (true) {
        auto nf = detail::engine_next_finish(st, p);
        if (!injected && (!nf || nf->first > inject_at)) {
            detail::engine_advance(st, p, inject_at);
            detail::engine_submit(st, p, inject, kInjectedRecord, inject_at, inject_at, false);
            detail::engine_start_pending(st, p);
            injected = true;
            continue;
        }
        if (!nf) throw ContractError("oracle predictor: target never finishes (absent?)");
        detail::engine_advance(st, p, nf->first);
        st.entries[nf->second].remaining = 0.0;
        detail::EngineEntry e = detail::engine_pop_finished(st, nf->second);
        detail::engine_start_pending(st, p);
        if (e.record == target) return st.clock - e.submit_time;
    }
}

double OracleLivePredictor::predict_incoming(const Query& incoming,
                                             std::span<const RunningQueryView> running,
                                             double when) {
    (void)running;  // the live engine state is the authoritative running set
    if (!sim_) throw ContractError("OracleLivePredictor: not bound to a simulation");
    return finish_of(sim_->engine(), kInjectedRecord, &incoming, when);
}

double OracleLivePredictor::predict_running(std::size_t target,
                                            std::span<const RunningQueryView> running, double now) {
    (void)now;
    if (!sim_) throw ContractError("OracleLivePredictor: not bound to a simulation");
    if (target >= running.size()) throw ContractError("predict_running: target out of range");
    return finish_of(sim_->engine(), running[target].record, nullptr, 0.0);
}

double OracleLivePredictor::predict_running_with_new(std::size_t target,
                                                     std::span<const RunningQueryView> running,
                                                     const Query& incoming, double when) {
    if (!sim_) throw ContractError("OracleLivePredictor: not bound to a simulation");
    if (target >= running.size()) throw ContractError("predict_running_with_new: target out of range");
    return finish_of(sim_->engine(), running[target].record, &incoming, when);
}

double WindowOraclePredictor::replay(std::span<const RunningQueryView> members, const Query* extra,
                                     double extra_at, RecordKey target) const {
    struct Sub {
        double t;
        QueryId qid;
        RecordKey rec;
        const Query* q;
    };
    std::vector<Sub> subs;
    subs.reserve(members.size() + 1);
    for (const RunningQueryView& m : members) subs.push_back({m.submit_time, m.query->query_id, m.record, m.query});
    if (extra) subs.push_back({extra_at, extra->query_id, kInjectedRecord, extra});
    if (subs.empty()) throw ContractError("window oracle: empty member set");
    std::sort(subs.begin(), subs.end(), [](const Sub& a, const Sub& b) {
        if (a.t != b.t) return a.t < b.t;
        if (a.qid != b.qid) return a.qid < b.qid;
        return a.rec < b.rec;
    });

    detail::EngineState st;
    st.clock = subs.front().t;
    std::size_t next = 0;
    while (true) {
        auto nf = detail::engine_next_finish(st, params_);
        bool have_sub = next < subs.size();
        if (nf && (!have_sub || nf->first <= subs[next].t)) {
            detail::engine_advance(st, params_, nf->first);
            st.entries[nf->second].remaining = 0.0;
            detail::EngineEntry e = detail::engine_pop_finished(st, nf->second);
            if (e.record == target) return st.clock - e.submit_time;
        } else if (have_sub) {
            detail::engine_advance(st, params_, subs[next].t);
            detail::engine_submit(st, params_, subs[next].q, subs[next].rec, subs[next].t,
                                  subs[next].t, /*bypass_cap=*/true);
            ++next;
        } else {
            throw ContractError("window oracle: target not among members");
        }
    }
}

double WindowOraclePredictor::predict_incoming(const Query& incoming,
                                               std::span<const RunningQueryView> running,
                                               double when) {
    return replay(running, &incoming, when, kInjectedRecord);
}

double WindowOraclePredictor::predict_running(std::size_t target,
                                              std::span<const RunningQueryView> running,
                                              double now) {
    (void)now;
    if (target >= running.size()) throw ContractError("predict_running: target out of range");
    return replay(running, nullptr, 0.0, running[target].record);
}

double WindowOraclePredictor::predict_running_with_new(std::size_t target,
                                                       std::span<const RunningQueryView> running,
                                                       const Query& incoming, double when) {
    if (target >= running.size()) throw ContractError("predict_running_with_new: target out of range");
    return replay(running, &incoming, when, running[target].record);
}

}  // namespace iconq
