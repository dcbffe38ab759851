#include "iconq/scheduler.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "json.hpp"

namespace iconq {

using json = nlohmann::ordered_json;

SchedulerConfig SchedulerConfig::from_kv(KvConfig& kv) {
    SchedulerConfig cfg;
    cfg.lookahead = static_cast<int>(kv.get_int("lookahead", cfg.lookahead));
    cfg.tau_short = kv.get_double("tau_short", cfg.tau_short);
    cfg.lambda_starve = kv.get_double("lambda_starve", cfg.lambda_starve);
    cfg.check();
    return cfg;
}

void SchedulerConfig::check() const {
    if (lookahead < 0) throw ConfigError("scheduler: lookahead must be >= 0");
    if (!(tau_short >= 0.0) || !std::isfinite(tau_short))
        throw ConfigError("scheduler: tau_short must be >= 0");
    if (!(lambda_starve >= 0.0) || !std::isfinite(lambda_starve))
        throw ConfigError("scheduler: lambda_starve must be >= 0");
}

namespace {

constexpr double kMinFinishGap = 1e-3;  // predicted finishes sit strictly after `now`

struct FinishOrder {
    double finish;
    QueryId query_id;
    RecordKey record;
    std::size_t index;  // position within the running span

    bool operator<(const FinishOrder& o) const {
        if (finish != o.finish) return finish < o.finish;
        if (query_id != o.query_id) return query_id < o.query_id;
        return record < o.record;
    }
};

}  // namespace

std::optional<std::size_t> iconq_ingest(std::span<const WaitingQueryInfo> waiting,
                                        std::span<const RunningQueryView> running, double now,
                                        ConcurrentRuntimePredictor& predictor,
                                        const BaseRuntimePredictor& stage,
                                        const SchedulerConfig& cfg, IngestDiagnostics* diag) {
    cfg.check();
    if (diag) {
        diag->entries.clear();
        diag->predictor_calls = 0;
        diag->bypass = false;
    }
    if (waiting.empty()) return std::nullopt;
    for (const WaitingQueryInfo& w : waiting)
        if (w.query == nullptr) throw ContractError("scheduler: null waiting query");
    for (const RunningQueryView& r : running)
        if (r.query == nullptr) throw ContractError("scheduler: null running query");

    // Short queries skip the whole machinery: earliest arrival wins, no
    // concurrent-predictor traffic.
    std::vector<double> base(waiting.size());
    std::optional<std::size_t> shortest;
    for (std::size_t i = 0; i < waiting.size(); ++i) {
        base[i] = stage.predict_base(*waiting[i].query);
        if (base[i] >= cfg.tau_short) continue;
        if (!shortest) {
            shortest = i;
            continue;
        }
        const WaitingQueryInfo& a = waiting[i];
        const WaitingQueryInfo& b = waiting[*shortest];
        if (a.arrival_time < b.arrival_time ||
            (a.arrival_time == b.arrival_time && a.query->query_id < b.query->query_id))
            shortest = i;
    }
    if (shortest) {
        if (diag) diag->bypass = true;
        return shortest;
    }

    std::int64_t calls = 0;
    const std::size_t n = running.size();

    // Plain predictions double as finish-time estimates and as the baseline
    // side of delta2 / the score's running-set term.
    std::vector<double> plain(n), finish(n);
    std::vector<FinishOrder> order(n);
    for (std::size_t j = 0; j < n; ++j) {
        ++calls;
        plain[j] = predictor.predict_running(j, running, now);
        finish[j] = std::max(running[j].submit_time + plain[j], now + kMinFinishGap);
        order[j] = {finish[j], running[j].query->query_id, running[j].record, j};
    }
    std::sort(order.begin(), order.end());

    const std::size_t lookaheads = std::min<std::size_t>(
        static_cast<std::size_t>(cfg.lookahead), n);

    // Survivor sets per lookahead: queries predicted still running at t_l.
    struct Lookahead {
        double t;
        std::vector<RunningQueryView> views;
        std::vector<std::size_t> members;  // indices into `running`
    };
    std::vector<Lookahead> ahead(lookaheads);
    for (std::size_t l = 0; l < lookaheads; ++l) {
        ahead[l].t = order[l].finish;
        for (std::size_t j = 0; j < n; ++j)
            if (finish[j] > ahead[l].t) {
                ahead[l].views.push_back(running[j]);
                ahead[l].members.push_back(j);
            }
    }

    std::optional<std::size_t> best;
    double best_score = 0.0;
    std::vector<double> with_new_now(n);
    for (std::size_t i = 0; i < waiting.size(); ++i) {
        const WaitingQueryInfo& w = waiting[i];
        ++calls;
        const double p_now = predictor.predict_incoming(*w.query, running, now);
        for (std::size_t j = 0; j < n; ++j) {
            ++calls;
            with_new_now[j] = predictor.predict_running_with_new(j, running, *w.query, now);
        }

        bool candidate = true;
        for (std::size_t l = 0; l < lookaheads && candidate; ++l) {
            const Lookahead& la = ahead[l];
            ++calls;
            const double p_later = predictor.predict_incoming(*w.query, la.views, la.t);
            const double d1 = p_now - (p_later + (la.t - now));
            double d2 = 0.0;
            std::vector<bool> survives(n, false);
            for (std::size_t m = 0; m < la.members.size(); ++m) {
                const std::size_t j = la.members[m];
                survives[j] = true;
                ++calls;
                const double later =
                    predictor.predict_running_with_new(m, la.views, *w.query, la.t);
                d2 += with_new_now[j] - later;
            }
            // Queries predicted finished by t_l are unaffected by a submission
            // at t_l; their comparison point is the no-newcomer prediction.
            for (std::size_t j = 0; j < n; ++j)
                if (!survives[j]) d2 += with_new_now[j] - plain[j];
            if (d1 + d2 > 0.0) candidate = false;
        }

        const double delta1 = p_now - base[i];
        double delta2 = 0.0;
        for (std::size_t j = 0; j < n; ++j) delta2 += with_new_now[j] - plain[j];
        const double queueing = std::max(0.0, now - w.arrival_time);
        const double score = delta1 + delta2 - cfg.lambda_starve * queueing;
        if (diag)
            diag->entries.push_back(
                {w.record, w.query->query_id, candidate, delta1, delta2, score});

        if (!candidate) continue;
        if (!best) {
            best = i;
            best_score = score;
            continue;
        }
        const WaitingQueryInfo& b = waiting[*best];
        if (score < best_score ||
            (score == best_score &&
             (w.arrival_time < b.arrival_time ||
              (w.arrival_time == b.arrival_time && w.query->query_id < b.query->query_id)))) {
            best = i;
            best_score = score;
        }
    }
    if (diag) diag->predictor_calls = calls;
    return best;
}

std::string decision_log_to_jsonl(const std::vector<DecisionRow>& rows) {
    std::string out;
    for (const DecisionRow& r : rows) {
        json j;
        j["time"] = r.time;
        j["event"] = r.event;
        j["wq_size"] = r.wq_size;
        j["rq_size"] = r.rq_size;
        j["action"] = r.action;
        j["query_id"] = r.query_id;
        j["score"] = r.score;
        j["delta1"] = r.delta1;
        j["delta2"] = r.delta2;
        j["predictor_calls"] = r.predictor_calls;
        out += j.dump();
        out += '\n';
    }
    return out;
}

// ---------------------------------------------------------------------------

IconqSchedPolicy::IconqSchedPolicy(const SchedulerConfig& cfg,
                                   ConcurrentRuntimePredictor& predictor,
                                   const BaseRuntimePredictor& stage)
    : cfg_(cfg), predictor_(predictor), stage_(stage) {
    cfg_.check();
}

void IconqSchedPolicy::on_arrival(const ArrivalInstance& a) {
    if (a.query == nullptr) throw ContractError("scheduler: arrival without a query");
    wq_.push_back({a.record, a.query, a.arrival_time});
    last_event_ = "arrival";
    event_cap_ = wq_.size();
    submitted_this_event_ = 0;
}

void IconqSchedPolicy::on_finish(RecordKey record, double) {
    for (std::size_t i = 0; i < rq_.size(); ++i)
        if (rq_[i].record == record) {
            rq_.erase(rq_.begin() + static_cast<std::ptrdiff_t>(i));
            last_event_ = "finish";
            event_cap_ = wq_.size();
            submitted_this_event_ = 0;
            return;
        }
    throw ContractError("scheduler: finish for a record that was never submitted");
}

std::optional<RecordKey> IconqSchedPolicy::next_submission(double now) {
    DecisionRow row;
    row.time = now;
    row.event = last_event_;
    row.wq_size = wq_.size();
    row.rq_size = rq_.size();

    if (wq_.empty()) {
        row.action = "none";
        log_.push_back(std::move(row));
        return std::nullopt;
    }
    if (submitted_this_event_ >= event_cap_) {
        row.action = "cap";
        log_.push_back(std::move(row));
        return std::nullopt;
    }

    IngestDiagnostics diag;
    const std::optional<std::size_t> pick =
        iconq_ingest(wq_, rq_, now, predictor_, stage_, cfg_, &diag);
    row.predictor_calls = diag.predictor_calls;
    if (!pick) {
        row.action = "none";
        log_.push_back(std::move(row));
        return std::nullopt;
    }

    const WaitingQueryInfo& w = wq_[*pick];
    row.query_id = w.query->query_id;
    if (diag.bypass) {
        row.action = "bypass";
    } else {
        row.action = "submit";
        for (const IngestDiagnostics::Entry& e : diag.entries)
            if (e.record == w.record) {
                row.score = e.score;
                row.delta1 = e.delta1;
                row.delta2 = e.delta2;
                break;
            }
    }
    log_.push_back(std::move(row));
    return w.record;
}

void IconqSchedPolicy::on_submitted(RecordKey record, double now) {
    for (std::size_t i = 0; i < wq_.size(); ++i)
        if (wq_[i].record == record) {
            rq_.push_back({wq_[i].query, now, record});
            wq_.erase(wq_.begin() + static_cast<std::ptrdiff_t>(i));
            ++submitted_this_event_;
            return;
        }
    throw ContractError("scheduler: submission of a record not in the waiting queue");
}

// ---------------------------------------------------------------------------

PgmPolicy::PgmPolicy(std::function<double(const Query&)> mem_estimator, double capacity)
    : mem_(std::move(mem_estimator)), capacity_(capacity) {
    if (!mem_) throw ContractError("pgm policy: missing memory estimator");
    if (!(capacity_ > 0.0)) throw ConfigError("pgm policy: capacity must be > 0");
}

void PgmPolicy::on_arrival(const ArrivalInstance& a) {
    const double m = mem_(*a.query);
    if (!(m >= 0.0) || !std::isfinite(m))
        throw DataError("pgm policy: memory estimate must be finite and >= 0");
    wq_.push_back({a.record, a.query, a.arrival_time, m});
}

void PgmPolicy::on_finish(RecordKey record, double) { running_.erase(record); }

double PgmPolicy::running_usage() const {
    double usage = 0.0;
    for (const auto& [record, m] : running_) usage += m;
    return usage;
}

std::optional<RecordKey> PgmPolicy::next_submission(double) {
    if (wq_.empty()) return std::nullopt;
    const double headroom = capacity_ - running_usage();
    std::optional<std::size_t> best;
    for (std::size_t i = 0; i < wq_.size(); ++i) {
        const Waiting& w = wq_[i];
        const bool oversized = w.mem > capacity_;
        const bool admissible = oversized ? running_.empty() : w.mem <= headroom;
        if (!admissible) continue;
        if (!best) {
            best = i;
            continue;
        }
        const Waiting& b = wq_[*best];
        if (w.mem > b.mem ||
            (w.mem == b.mem &&
             (w.arrival_time < b.arrival_time ||
              (w.arrival_time == b.arrival_time && w.query->query_id < b.query->query_id))))
            best = i;
    }
    if (!best) return std::nullopt;
    return wq_[*best].record;
}

void PgmPolicy::on_submitted(RecordKey record, double) {
    for (std::size_t i = 0; i < wq_.size(); ++i)
        if (wq_[i].record == record) {
            running_[record] = wq_[i].mem;
            wq_.erase(wq_.begin() + static_cast<std::ptrdiff_t>(i));
            return;
        }
    throw ContractError("pgm policy: submission of a record not in the waiting queue");
}

// ---------------------------------------------------------------------------

QshufflerPolicy::QshufflerPolicy(const QshufflerModel& model, FeatureCache& cache,
                                 std::int64_t max_running)
    : model_(model), cache_(cache), max_running_(max_running) {
    if (max_running_ < 1) throw ConfigError("qshuffler policy: max_running must be >= 1");
    if (model_.k() < 1) throw ContractError("qshuffler policy: model is untrained");
}

int QshufflerPolicy::cluster_of(const Query& q) {
    const auto it = cluster_cache_.find(q.query_id);
    if (it != cluster_cache_.end()) return it->second;
    const int c = model_.cluster_of(cache_.qfv(q));
    cluster_cache_[q.query_id] = c;
    return c;
}

void QshufflerPolicy::on_arrival(const ArrivalInstance& a) {
    wq_.push_back({a.record, a.query, a.arrival_time});
}

void QshufflerPolicy::on_finish(RecordKey record, double) {
    for (std::size_t i = 0; i < rq_.size(); ++i)
        if (rq_[i].first == record) {
            rq_.erase(rq_.begin() + static_cast<std::ptrdiff_t>(i));
            return;
        }
}

std::optional<RecordKey> QshufflerPolicy::next_submission(double) {
    if (wq_.empty() || static_cast<std::int64_t>(rq_.size()) >= max_running_) return std::nullopt;

    std::vector<int> mix(static_cast<std::size_t>(model_.k()), 0);
    for (const auto& [record, cluster] : rq_) mix[static_cast<std::size_t>(cluster)] += 1;

    std::optional<std::size_t> best;
    double best_ratio = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < wq_.size(); ++i) {
        const Waiting& w = wq_[i];
        const int c = cluster_of(*w.query);
        const double ratio = model_.predict(cache_.qfv(*w.query), mix) / model_.cluster_base(c);
        if (!best || ratio < best_ratio ||
            (ratio == best_ratio &&
             (w.arrival_time < wq_[*best].arrival_time ||
              (w.arrival_time == wq_[*best].arrival_time &&
               w.query->query_id < wq_[*best].query->query_id)))) {
            best = i;
            best_ratio = ratio;
        }
    }
    return wq_[*best].record;
}

void QshufflerPolicy::on_submitted(RecordKey record, double) {
    for (std::size_t i = 0; i < wq_.size(); ++i)
        if (wq_[i].record == record) {
            rq_.push_back({record, cluster_of(*wq_[i].query)});
            wq_.erase(wq_.begin() + static_cast<std::ptrdiff_t>(i));
            return;
        }
    throw ContractError("qshuffler policy: submission of a record not in the waiting queue");
}

}  // namespace iconq
