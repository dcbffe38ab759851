#include "iconq/iconq_model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

#include "iconq/rng.hpp"
#include "json.hpp"

namespace iconq {

using json = nlohmann::ordered_json;

IconqHp IconqHp::from_kv(KvConfig& kv) {
    IconqHp hp;
    hp.hidden = static_cast<int>(kv.get_int("hidden", hp.hidden));
    hp.learning_rate = kv.get_double("learning_rate", hp.learning_rate);
    hp.batch_size = static_cast<int>(kv.get_int("batch_size", hp.batch_size));
    hp.epochs = static_cast<int>(kv.get_int("epochs", hp.epochs));
    hp.loss_mix = kv.get_double("loss_mix", hp.loss_mix);
    hp.patience = static_cast<int>(kv.get_int("patience", hp.patience));
    hp.validation_fraction = kv.get_double("validation_fraction", hp.validation_fraction);
    hp.seed = static_cast<std::uint64_t>(kv.get_int("seed", static_cast<std::int64_t>(hp.seed)));
    hp.check();
    return hp;
}

void IconqHp::check() const {
    if (hidden < 1) throw ConfigError("iconq hp: hidden must be >= 1");
    if (!(learning_rate > 0.0)) throw ConfigError("iconq hp: learning_rate must be > 0");
    if (batch_size < 1) throw ConfigError("iconq hp: batch_size must be >= 1");
    if (epochs < 1) throw ConfigError("iconq hp: epochs must be >= 1");
    if (!(loss_mix >= 0.0)) throw ConfigError("iconq hp: loss_mix must be >= 0");
    if (patience < 1) throw ConfigError("iconq hp: patience must be >= 1");
    if (!(validation_fraction >= 0.0 && validation_fraction <= 0.5))
        throw ConfigError("iconq hp: validation_fraction must be in [0, 0.5]");
}

std::vector<std::uint8_t> lognorm_mask(const FeatureConfig& cfg) {
    const int qd = cfg.qfv_dim();
    std::vector<std::uint8_t> mask(static_cast<std::size_t>(cfg.ifv_dim()), 0);
    for (int block = 0; block < 2; ++block) {
        const int base = block * qd;
        mask[static_cast<std::size_t>(base)] = 1;  // runtime feature
        for (int k = 0; k < cfg.n_p; ++k)          // summed operator rows
            mask[static_cast<std::size_t>(base + 1 + cfg.n_p + k)] = 1;
        for (int t = 0; t < cfg.n_t; ++t)  // catalog-table scanned rows
            mask[static_cast<std::size_t>(base + 1 + 2 * cfg.n_p + t)] = 1;
    }
    mask[static_cast<std::size_t>(2 * qd)] = 1;  // time gap
    return mask;
}

// ---------------------------------------------------------------------------
// Parameter layout: [forward cell | backward cell | W1 (H x 2H) | b1 (H) |
// W2 (H) | b2 (1)]. Cell layout is documented in lstm.hpp.

namespace {

constexpr double kQFloor = 0.1;  // denominators in the relative-error term

std::size_t head_param_count(int hidden) {
    const std::size_t h = static_cast<std::size_t>(hidden);
    return h * 2 * h + h + h + 1;
}

}  // namespace

struct IconqModel::Workspace {
    std::vector<double> norm;
    std::vector<const double*> fwd_ptrs;
    std::vector<const double*> bwd_ptrs;
    LstmTrace fwd_trace;
    LstmTrace bwd_trace;
    std::vector<double> cat;
    std::vector<double> head_hidden;
    std::vector<double> d_cat;
    std::vector<double> d_head;
};

IconqModel IconqModel::init(const FeatureConfig& fc, const IconqHp& hp) {
    fc.check();
    hp.check();
    IconqModel m;
    m.input_dim_ = fc.ifv_dim();
    m.hidden_ = hp.hidden;
    m.loss_mix_ = hp.loss_mix;
    m.mean_.assign(static_cast<std::size_t>(m.input_dim_), 0.0);
    m.sd_.assign(static_cast<std::size_t>(m.input_dim_), 1.0);
    m.log_mask_ = lognorm_mask(fc);

    const LstmSpec spec = m.cell_spec();
    m.params_.assign(2 * spec.param_count() + head_param_count(m.hidden_), 0.0);

    Rng rng(hp.seed);
    const double ws = 1.0 / std::sqrt(static_cast<double>(spec.input_dim));
    const double us = 1.0 / std::sqrt(static_cast<double>(spec.hidden_dim));
    for (int dir = 0; dir < 2; ++dir) {
        double* base = m.params_.data() + static_cast<std::size_t>(dir) * spec.param_count();
        for (std::size_t i = 0; i < spec.w_count(); ++i) base[i] = rng.uniform(-ws, ws);
        double* u = base + spec.w_count();
        for (std::size_t i = 0; i < spec.u_count(); ++i) u[i] = rng.uniform(-us, us);
        double* b = u + spec.u_count();
        // Forget-gate bias starts at one so early training does not erase
        // state.
        for (int k = 0; k < m.hidden_; ++k) b[m.hidden_ + k] = 1.0;
    }
    double* head = m.params_.data() + m.mlp_offset();
    const double cs = 1.0 / std::sqrt(static_cast<double>(2 * m.hidden_));
    for (int i = 0; i < m.hidden_ * 2 * m.hidden_; ++i) head[i] = rng.uniform(-cs, cs);
    double* w2 = head + m.hidden_ * 2 * m.hidden_ + m.hidden_;
    for (int i = 0; i < m.hidden_; ++i) w2[i] = rng.uniform(-us, us);
    return m;
}

void IconqModel::normalize_into(const std::vector<double>& raw, double* out) const {
    if (static_cast<int>(raw.size()) != input_dim_)
        throw ContractError("iconq: series element has dimension " + std::to_string(raw.size()) +
                            ", expected " + std::to_string(input_dim_));
    for (int d = 0; d < input_dim_; ++d) {
        double v = raw[static_cast<std::size_t>(d)];
        if (log_mask_[static_cast<std::size_t>(d)]) v = std::log1p(v);
        out[d] = (v - mean_[static_cast<std::size_t>(d)]) / sd_[static_cast<std::size_t>(d)];
    }
}

double IconqModel::evaluate(std::span<const std::vector<double>> series,
                            std::size_t target_index, Workspace& ws) const {
    const std::size_t n = series.size();
    if (n == 0) throw ContractError("iconq: empty series");
    if (target_index >= n) throw ContractError("iconq: target index out of range");

    const std::size_t d = static_cast<std::size_t>(input_dim_);
    if (ws.norm.size() < n * d) ws.norm.resize(n * d);
    for (std::size_t i = 0; i < n; ++i) normalize_into(series[i], ws.norm.data() + i * d);

    ws.fwd_ptrs.clear();
    for (std::size_t i = 0; i <= target_index; ++i) ws.fwd_ptrs.push_back(ws.norm.data() + i * d);
    ws.bwd_ptrs.clear();
    for (std::size_t i = n; i-- > target_index;) ws.bwd_ptrs.push_back(ws.norm.data() + i * d);

    const LstmSpec spec = cell_spec();
    const double* hf = lstm_forward(spec, params_.data(), ws.fwd_ptrs, ws.fwd_trace);
    const double* hb =
        lstm_forward(spec, params_.data() + spec.param_count(), ws.bwd_ptrs, ws.bwd_trace);

    const std::size_t h = static_cast<std::size_t>(hidden_);
    ws.cat.resize(2 * h);
    std::memcpy(ws.cat.data(), hf, sizeof(double) * h);
    std::memcpy(ws.cat.data() + h, hb, sizeof(double) * h);

    const double* w1 = params_.data() + mlp_offset();
    const double* b1 = w1 + h * 2 * h;
    const double* w2 = b1 + h;
    const double* b2 = w2 + h;
    ws.head_hidden.resize(h);
    for (std::size_t r = 0; r < h; ++r) {
        double acc = b1[r];
        const double* row = w1 + r * 2 * h;
        for (std::size_t c = 0; c < 2 * h; ++c) acc += row[c] * ws.cat[c];
        ws.head_hidden[r] = std::tanh(acc);
    }
    double out = *b2;
    for (std::size_t r = 0; r < h; ++r) out += w2[r] * ws.head_hidden[r];
    return out;
}

double IconqModel::predict(std::span<const std::vector<double>> series,
                           std::size_t target_index) const {
    Workspace ws;
    return std::exp(evaluate(series, target_index, ws));
}

double IconqModel::predict_with_states(std::span<const std::vector<double>> series,
                                       std::size_t target_index,
                                       std::vector<double>* forward_state,
                                       std::vector<double>* backward_state) const {
    Workspace ws;
    const double m = evaluate(series, target_index, ws);
    const std::size_t h = static_cast<std::size_t>(hidden_);
    if (forward_state) forward_state->assign(ws.cat.begin(), ws.cat.begin() + h);
    if (backward_state) backward_state->assign(ws.cat.begin() + h, ws.cat.end());
    return std::exp(m);
}

std::vector<double> IconqModel::predict_batch(std::span<const Request> requests) const {
    Workspace ws;
    std::vector<double> out;
    out.reserve(requests.size());
    for (const Request& r : requests) {
        if (!r.series) throw ContractError("iconq: null series in batch request");
        out.push_back(std::exp(evaluate(*r.series, r.target_index, ws)));
    }
    return out;
}

namespace {

// Loss on one sample given the log-space output m and the positive label y:
// |m - log y| + mix * (max(p/y', y/p') - 1) with denominators floored.
double loss_from_output(double m, double y, double mix, double* d_m) {
    const double p = std::exp(m);
    const double ly = std::log(y);
    double loss = std::abs(m - ly);
    double grad = m > ly ? 1.0 : (m < ly ? -1.0 : 0.0);
    const double yf = std::max(y, kQFloor);
    const double pf = std::max(p, kQFloor);
    const double qa = p / yf;
    const double qb = y / pf;
    if (qa >= qb) {
        loss += mix * (qa - 1.0);
        grad += mix * p / yf;
    } else {
        loss += mix * (qb - 1.0);
        if (p > kQFloor) grad += mix * (-y / p);
    }
    if (d_m) *d_m = grad;
    return loss;
}

}  // namespace

double IconqModel::sample_loss(const TrainSample& sample) const {
    if (!(sample.label > 0.0)) throw DataError("iconq: non-positive label");
    Workspace ws;
    const double m = evaluate(sample.series, sample.target_index, ws);
    return loss_from_output(m, sample.label, loss_mix_, nullptr);
}

double IconqModel::loss_and_grad(const TrainSample& sample, Workspace& ws, double* grad) const {
    if (!(sample.label > 0.0)) throw DataError("iconq: non-positive label");
    const double m = evaluate(sample.series, sample.target_index, ws);
    double dm = 0.0;
    const double loss = loss_from_output(m, sample.label, loss_mix_, &dm);

    const std::size_t h = static_cast<std::size_t>(hidden_);
    const double* w1 = params_.data() + mlp_offset();
    const double* w2 = w1 + h * 2 * h + h;
    double* g_w1 = grad + mlp_offset();
    double* g_b1 = g_w1 + h * 2 * h;
    double* g_w2 = g_b1 + h;
    double* g_b2 = g_w2 + h;

    ws.d_cat.assign(2 * h, 0.0);
    ws.d_head.resize(h);
    *g_b2 += dm;
    for (std::size_t r = 0; r < h; ++r) {
        const double a = ws.head_hidden[r];
        g_w2[r] += dm * a;
        const double dz = dm * w2[r] * (1.0 - a * a);
        ws.d_head[r] = dz;
        g_b1[r] += dz;
        double* g_row = g_w1 + r * 2 * h;
        const double* row = w1 + r * 2 * h;
        for (std::size_t c = 0; c < 2 * h; ++c) {
            g_row[c] += dz * ws.cat[c];
            ws.d_cat[c] += dz * row[c];
        }
    }

    const LstmSpec spec = cell_spec();
    lstm_backward(spec, params_.data(), ws.fwd_trace, ws.d_cat.data(), grad);
    lstm_backward(spec, params_.data() + spec.param_count(), ws.bwd_trace, ws.d_cat.data() + h,
                  grad + spec.param_count());
    return loss;
}

namespace {

// Extended-precision twin of the forward computation, used only as the
// finite-difference reference. Working in long double keeps the difference
// quotient's rounding floor far below the comparison tolerance even for
// parameters with tiny gradients; the analytic gradient under test stays in
// ordinary doubles.
long double net_loss_ld(const long double* params, int dim, int hidden,
                        const std::vector<std::vector<long double>>& xs, std::size_t target,
                        long double label, long double mix) {
    const int h = hidden;
    const int g4 = 4 * h;
    const LstmSpec spec{dim, hidden};
    auto run_dir = [&](std::size_t base, bool forward) {
        std::vector<long double> hh(static_cast<std::size_t>(h), 0.0L);
        std::vector<long double> cc(static_cast<std::size_t>(h), 0.0L);
        std::vector<long double> z(static_cast<std::size_t>(g4));
        const long double* w = params + base;
        const long double* u = w + spec.w_count();
        const long double* b = u + spec.u_count();
        const std::size_t n = xs.size();
        const std::size_t count = forward ? target + 1 : n - target;
        for (std::size_t s = 0; s < count; ++s) {
            const std::vector<long double>& x = forward ? xs[s] : xs[n - 1 - s];
            for (int r = 0; r < g4; ++r) {
                long double acc = b[r];
                const long double* wr = w + static_cast<std::size_t>(r) * dim;
                for (int k = 0; k < dim; ++k) acc += wr[k] * x[static_cast<std::size_t>(k)];
                const long double* ur = u + static_cast<std::size_t>(r) * h;
                for (int k = 0; k < h; ++k) acc += ur[k] * hh[static_cast<std::size_t>(k)];
                z[static_cast<std::size_t>(r)] = acc;
            }
            for (int k = 0; k < h; ++k) {
                const long double gi = 1.0L / (1.0L + std::exp(-z[static_cast<std::size_t>(k)]));
                const long double gf =
                    1.0L / (1.0L + std::exp(-z[static_cast<std::size_t>(h + k)]));
                const long double gc = std::tanh(z[static_cast<std::size_t>(2 * h + k)]);
                const long double go =
                    1.0L / (1.0L + std::exp(-z[static_cast<std::size_t>(3 * h + k)]));
                cc[static_cast<std::size_t>(k)] = gf * cc[static_cast<std::size_t>(k)] + gi * gc;
                hh[static_cast<std::size_t>(k)] = go * std::tanh(cc[static_cast<std::size_t>(k)]);
            }
        }
        return hh;
    };
    const std::size_t cell = spec.param_count();
    const std::vector<long double> hf = run_dir(0, true);
    const std::vector<long double> hb = run_dir(cell, false);
    const long double* w1 = params + 2 * cell;
    const long double* b1 = w1 + static_cast<std::size_t>(h) * 2 * h;
    const long double* w2 = b1 + h;
    const long double* b2 = w2 + h;
    long double m = *b2;
    for (int r = 0; r < h; ++r) {
        long double acc = b1[r];
        const long double* row = w1 + static_cast<std::size_t>(r) * 2 * h;
        for (int k = 0; k < h; ++k) acc += row[k] * hf[static_cast<std::size_t>(k)];
        for (int k = 0; k < h; ++k) acc += row[h + k] * hb[static_cast<std::size_t>(k)];
        m += w2[r] * std::tanh(acc);
    }
    const long double p = std::exp(m);
    const long double ly = std::log(label);
    long double loss = m > ly ? m - ly : ly - m;
    const long double yf = std::max(label, static_cast<long double>(kQFloor));
    const long double pf = std::max(p, static_cast<long double>(kQFloor));
    const long double qa = p / yf;
    const long double qb = label / pf;
    loss += mix * ((qa >= qb ? qa : qb) - 1.0L);
    return loss;
}

}  // namespace

double IconqModel::gradient_check(const TrainSample& sample, double eps) const {
    std::vector<std::size_t> all(params_.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    return gradient_check(sample, eps, all);
}

double IconqModel::gradient_check(const TrainSample& sample, double eps,
                                  std::span<const std::size_t> param_indices) const {
    if (param_indices.empty()) return 0.0;
    if (!(sample.label > 0.0)) throw DataError("iconq: non-positive label");
    std::vector<double> grad(params_.size(), 0.0);
    Workspace ws;
    loss_and_grad(sample, ws, grad.data());

    // Normalized inputs are parameter-independent; fix them once.
    std::vector<std::vector<long double>> xs(sample.series.size());
    std::vector<double> row(static_cast<std::size_t>(input_dim_));
    for (std::size_t i = 0; i < sample.series.size(); ++i) {
        normalize_into(sample.series[i], row.data());
        xs[i].assign(row.begin(), row.end());
    }
    std::vector<long double> probe(params_.begin(), params_.end());

    double worst = 0.0;
    for (std::size_t idx : param_indices) {
        if (idx >= params_.size()) throw ContractError("iconq: parameter index out of range");
        const long double orig = probe[idx];
        probe[idx] = orig + static_cast<long double>(eps);
        const long double up = net_loss_ld(probe.data(), input_dim_, hidden_, xs,
                                           sample.target_index,
                                           static_cast<long double>(sample.label),
                                           static_cast<long double>(loss_mix_));
        probe[idx] = orig - static_cast<long double>(eps);
        const long double down = net_loss_ld(probe.data(), input_dim_, hidden_, xs,
                                             sample.target_index,
                                             static_cast<long double>(sample.label),
                                             static_cast<long double>(loss_mix_));
        probe[idx] = orig;
        const double fd = static_cast<double>((up - down) / (2.0L * static_cast<long double>(eps)));
        const double a = grad[idx];
        const double rel = std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), 1e-8});
        worst = std::max(worst, rel);
    }
    return worst;
}

// ---------------------------------------------------------------------------
// Training

IconqModel IconqModel::train(std::span<const TrainSample> dataset, const FeatureConfig& fc,
                             const IconqHp& hp, TrainReport* report) {
    fc.check();
    hp.check();
    if (dataset.empty()) throw DataError("iconq train: empty dataset");
    const int dim = fc.ifv_dim();
    for (const TrainSample& s : dataset) {
        if (!(s.label > 0.0)) throw DataError("iconq train: non-positive label");
        if (s.series.empty()) throw DataError("iconq train: empty series");
        if (s.target_index >= s.series.size())
            throw DataError("iconq train: target index out of range");
        for (const auto& v : s.series)
            if (static_cast<int>(v.size()) != dim)
                throw DataError("iconq train: series element dimension mismatch");
    }

    IconqModel model = init(fc, hp);

    // Standardization statistics over the log1p-compressed training inputs.
    const std::size_t d = static_cast<std::size_t>(dim);
    std::vector<double> sum(d, 0.0), sumsq(d, 0.0);
    std::size_t count = 0;
    for (const TrainSample& s : dataset)
        for (const auto& vec : s.series) {
            for (std::size_t k = 0; k < d; ++k) {
                const double v = model.log_mask_[k] ? std::log1p(vec[k]) : vec[k];
                sum[k] += v;
                sumsq[k] += v * v;
            }
            ++count;
        }
    for (std::size_t k = 0; k < d; ++k) {
        const double mean = sum[k] / static_cast<double>(count);
        const double var = std::max(0.0, sumsq[k] / static_cast<double>(count) - mean * mean);
        const double sd = std::sqrt(var);
        model.mean_[k] = mean;
        model.sd_[k] = sd < 1e-8 ? 1.0 : sd;
    }

    // Train/validation split groups by query id so no query contributes to
    // both sides.
    std::vector<QueryId> qids;
    for (const TrainSample& s : dataset) qids.push_back(s.query_id);
    std::sort(qids.begin(), qids.end());
    qids.erase(std::unique(qids.begin(), qids.end()), qids.end());
    Rng rng(hp.seed);
    Rng split_rng = rng.fork(1);
    for (std::size_t i = qids.size(); i > 1; --i) {
        const std::size_t j =
            static_cast<std::size_t>(split_rng.uniform_int(0, static_cast<std::int64_t>(i) - 1));
        std::swap(qids[i - 1], qids[j]);
    }
    const std::size_t n_val_qids =
        static_cast<std::size_t>(hp.validation_fraction * static_cast<double>(qids.size()));
    std::vector<QueryId> val_qids(qids.begin(), qids.begin() + n_val_qids);
    std::sort(val_qids.begin(), val_qids.end());
    auto in_val = [&](QueryId q) {
        return std::binary_search(val_qids.begin(), val_qids.end(), q);
    };
    std::vector<std::size_t> train_idx, val_idx;
    for (std::size_t i = 0; i < dataset.size(); ++i)
        (in_val(dataset[i].query_id) ? val_idx : train_idx).push_back(i);
    if (train_idx.empty()) {
        train_idx = std::move(val_idx);
        val_idx.clear();
    }

    // Start the output bias at the mean log label so the head begins at the
    // marginal estimate.
    double log_sum = 0.0;
    for (std::size_t i : train_idx) log_sum += std::log(dataset[i].label);
    model.params_.back() = log_sum / static_cast<double>(train_idx.size());

    Workspace ws;
    auto mean_loss = [&](const std::vector<std::size_t>& idx) {
        double total = 0.0;
        for (std::size_t i : idx) {
            const double m = model.evaluate(dataset[i].series, dataset[i].target_index, ws);
            total += loss_from_output(m, dataset[i].label, model.loss_mix_, nullptr);
        }
        return idx.empty() ? 0.0 : total / static_cast<double>(idx.size());
    };

    TrainReport rep;
    rep.initial_loss = mean_loss(train_idx);
    rep.best_validation_loss = std::numeric_limits<double>::quiet_NaN();

    const std::size_t np = model.params_.size();
    std::vector<double> grad(np, 0.0), m1(np, 0.0), m2(np, 0.0);
    std::vector<double> best_params;
    double best_val = std::numeric_limits<double>::infinity();
    int stale_epochs = 0;
    long adam_step = 0;
    const double b1 = 0.9, b2 = 0.999, adam_eps = 1e-8;
    Rng shuffle_rng = rng.fork(2);
    std::vector<std::size_t> order = train_idx;

    for (int epoch = 0; epoch < hp.epochs; ++epoch) {
        for (std::size_t i = order.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(
                shuffle_rng.uniform_int(0, static_cast<std::int64_t>(i) - 1));
            std::swap(order[i - 1], order[j]);
        }
        for (std::size_t start = 0; start < order.size();
             start += static_cast<std::size_t>(hp.batch_size)) {
            const std::size_t stop =
                std::min(order.size(), start + static_cast<std::size_t>(hp.batch_size));
            std::fill(grad.begin(), grad.end(), 0.0);
            for (std::size_t i = start; i < stop; ++i)
                model.loss_and_grad(dataset[order[i]], ws, grad.data());
            const double scale = 1.0 / static_cast<double>(stop - start);
            ++adam_step;
            const double corr1 = 1.0 - std::pow(b1, static_cast<double>(adam_step));
            const double corr2 = 1.0 - std::pow(b2, static_cast<double>(adam_step));
            for (std::size_t k = 0; k < np; ++k) {
                const double g = grad[k] * scale;
                m1[k] = b1 * m1[k] + (1.0 - b1) * g;
                m2[k] = b2 * m2[k] + (1.0 - b2) * g * g;
                model.params_[k] -= hp.learning_rate * (m1[k] / corr1) /
                                    (std::sqrt(m2[k] / corr2) + adam_eps);
            }
        }
        rep.epochs_run = epoch + 1;
        if (!val_idx.empty()) {
            const double vl = mean_loss(val_idx);
            if (vl < best_val - 1e-9) {
                best_val = vl;
                best_params = model.params_;
                stale_epochs = 0;
            } else if (++stale_epochs >= hp.patience) {
                break;
            }
        }
    }
    if (!best_params.empty()) {
        model.params_ = std::move(best_params);
        rep.best_validation_loss = best_val;
    }
    rep.final_train_loss = mean_loss(train_idx);
    if (report) *report = rep;
    return model;
}

// ---------------------------------------------------------------------------
// Checkpointing

std::string IconqModel::to_json_string() const {
    for (double v : params_)
        if (!std::isfinite(v)) throw DataError("iconq checkpoint: non-finite parameter");
    json j;
    j["kind"] = "iconq_net";
    j["input_dim"] = input_dim_;
    j["hidden"] = hidden_;
    j["loss_mix"] = loss_mix_;
    j["mean"] = mean_;
    j["sd"] = sd_;
    j["log_mask"] = log_mask_;
    j["params"] = params_;
    return j.dump();
}

IconqModel IconqModel::from_json_string(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw DataError(std::string("iconq checkpoint: bad JSON: ") + e.what());
    }
    try {
        if (j.at("kind").get<std::string>() != "iconq_net")
            throw DataError("iconq checkpoint: wrong kind");
        IconqModel m;
        m.input_dim_ = j.at("input_dim").get<int>();
        m.hidden_ = j.at("hidden").get<int>();
        m.loss_mix_ = j.at("loss_mix").get<double>();
        m.mean_ = j.at("mean").get<std::vector<double>>();
        m.sd_ = j.at("sd").get<std::vector<double>>();
        m.log_mask_ = j.at("log_mask").get<std::vector<std::uint8_t>>();
        m.params_ = j.at("params").get<std::vector<double>>();
        if (m.input_dim_ < 1 || m.hidden_ < 1)
            throw DataError("iconq checkpoint: bad dimensions");
        const std::size_t d = static_cast<std::size_t>(m.input_dim_);
        if (m.mean_.size() != d || m.sd_.size() != d || m.log_mask_.size() != d)
            throw DataError("iconq checkpoint: statistics size mismatch");
        if (m.params_.size() != 2 * m.cell_spec().param_count() + head_param_count(m.hidden_))
            throw DataError("iconq checkpoint: parameter count mismatch");
        for (double s : m.sd_)
            if (!(s > 0.0)) throw DataError("iconq checkpoint: non-positive scale");
        return m;
    } catch (const json::exception& e) {
        throw DataError(std::string("iconq checkpoint: ") + e.what());
    }
}

void IconqModel::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("iconq checkpoint: cannot open " + path + " for writing");
    out << to_json_string() << '\n';
    if (!out) throw DataError("iconq checkpoint: write failed for " + path);
}

IconqModel IconqModel::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("iconq checkpoint: cannot open " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    return from_json_string(buf.str());
}

std::string IconqBundle::to_json_string() const {
    json j;
    j["kind"] = "iconq";
    j["feature"] = {{"n_p", feature.n_p}, {"n_t", feature.n_t}};
    j["stage"] = json::parse(stage.to_json_string());
    j["model"] = json::parse(model.to_json_string());
    return j.dump();
}

IconqBundle IconqBundle::from_json_string(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw DataError(std::string("iconq bundle: bad JSON: ") + e.what());
    }
    try {
        if (j.at("kind").get<std::string>() != "iconq")
            throw DataError("iconq bundle: wrong kind");
        IconqBundle b{FeatureConfig{j.at("feature").at("n_p").get<int>(),
                                    j.at("feature").at("n_t").get<int>()},
                      StageModel::from_json_string(j.at("stage").dump()),
                      IconqModel::from_json_string(j.at("model").dump())};
        b.feature.check();
        if (b.model.input_dim() != b.feature.ifv_dim())
            throw DataError("iconq bundle: feature layout does not match the network");
        if (b.stage.catalog().size() > static_cast<std::size_t>(b.feature.n_t))
            throw DataError("iconq bundle: catalog larger than the feature layout allows");
        return b;
    } catch (const json::exception& e) {
        throw DataError(std::string("iconq bundle: ") + e.what());
    }
}

void IconqBundle::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("iconq bundle: cannot open " + path + " for writing");
    out << to_json_string() << '\n';
    if (!out) throw DataError("iconq bundle: write failed for " + path);
}

IconqBundle IconqBundle::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("iconq bundle: cannot open " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    return from_json_string(buf.str());
}

// ---------------------------------------------------------------------------
// Dataset assembly and the live adapter

std::vector<TrainSample> build_training_set(const std::vector<ExecutedRecord>& trace,
                                            const QueryPool& pool, FeatureCache& cache) {
    const std::vector<ConcurrencyWindow> windows = derive_windows(trace);
    std::vector<TrainSample> samples;
    samples.reserve(windows.size());
    for (const ConcurrencyWindow& w : windows) {
        std::vector<SeriesMember> members;
        members.reserve(w.members.size());
        for (const WindowMember& m : w.members)
            members.push_back(SeriesMember{&pool.by_id(m.query_id), m.submit_time, m.record});
        Series s = build_series(cache, members, w.target_record);
        const ExecutedRecord& rec = trace[static_cast<std::size_t>(w.target_record)];
        samples.push_back(
            TrainSample{std::move(s.x), s.target_index, rec.system_runtime, rec.query_id});
    }
    return samples;
}

IconqPredictor::IconqPredictor(const FeatureConfig& fc, const StageModel& stage,
                               const IconqModel& model)
    : stage_(stage),
      model_(model),
      cache_(fc, stage.catalog(), [s = &stage](const Query& q) { return s->predict_base(q); }) {
    if (model.input_dim() != fc.ifv_dim())
        throw ContractError("iconq predictor: feature layout does not match the network");
}

IconqPredictor::IconqPredictor(const IconqBundle& bundle)
    : IconqPredictor(bundle.feature, bundle.stage, bundle.model) {}

namespace {
constexpr RecordKey kIncomingRecord = -1;
}

// Assembles the interaction series for one target over the running set,
// optionally with a hypothetical newcomer appended as the final element.
Series IconqPredictor::running_series(std::span<const RunningQueryView> running,
                                      const Query* extra, double extra_time,
                                      RecordKey target_record) {
    struct Entry {
        const Query* query;
        double submit;
        RecordKey record;
    };
    std::vector<Entry> entries;
    entries.reserve(running.size());
    for (const RunningQueryView& v : running) {
        if (!v.query) throw ContractError("iconq predictor: null query in running set");
        if (v.record == kIncomingRecord)
            throw ContractError("iconq predictor: running record collides with the newcomer key");
        entries.push_back(Entry{v.query, v.submit_time, v.record});
    }
    std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
        if (a.submit != b.submit) return a.submit < b.submit;
        if (a.query->query_id != b.query->query_id) return a.query->query_id < b.query->query_id;
        return a.record < b.record;
    });

    const Query* target_query = nullptr;
    double target_time = 0.0;
    std::size_t target_pos = 0;
    if (target_record == kIncomingRecord) {
        if (!extra) throw ContractError("iconq predictor: newcomer target without a newcomer");
        target_query = extra;
        target_time = extra_time;
        target_pos = entries.size();
    } else {
        bool found = false;
        for (std::size_t i = 0; i < entries.size(); ++i) {
            if (entries[i].record == target_record) {
                if (found) throw ContractError("iconq predictor: duplicate running record key");
                target_query = entries[i].query;
                target_time = entries[i].submit;
                target_pos = i;
                found = true;
            }
        }
        if (!found) throw ContractError("iconq predictor: target not in the running set");
    }

    const std::vector<double> target_qfv = cache_.qfv(*target_query);
    Series out;
    out.target_index = target_pos;
    out.x.reserve(entries.size() + (extra ? 1 : 0));
    for (std::size_t i = 0; i < entries.size(); ++i) {
        if (target_record != kIncomingRecord && i == target_pos) {
            out.x.push_back(interaction_vector(target_qfv, target_qfv, 0.0, 0.0, cache_.config()));
        } else {
            out.x.push_back(interaction_vector(cache_.qfv(*entries[i].query), target_qfv,
                                               entries[i].submit, target_time, cache_.config()));
        }
    }
    if (extra) {
        if (target_record == kIncomingRecord)
            out.x.push_back(interaction_vector(target_qfv, target_qfv, 0.0, 0.0, cache_.config()));
        else
            out.x.push_back(interaction_vector(cache_.qfv(*extra), target_qfv, extra_time,
                                               target_time, cache_.config()));
    }
    return out;
}

double IconqPredictor::predict_incoming(const Query& incoming,
                                        std::span<const RunningQueryView> running, double when) {
    Series s = running_series(running, &incoming, when, kIncomingRecord);
    return model_.predict(s.x, s.target_index);
}

double IconqPredictor::predict_running(std::size_t target,
                                       std::span<const RunningQueryView> running, double now) {
    (void)now;  // total runtime is re-predicted from the submission series
    if (target >= running.size()) throw ContractError("iconq predictor: target index out of range");
    Series s = running_series(running, nullptr, 0.0, running[target].record);
    return model_.predict(s.x, s.target_index);
}

double IconqPredictor::predict_running_with_new(std::size_t target,
                                                std::span<const RunningQueryView> running,
                                                const Query& incoming, double when) {
    if (target >= running.size()) throw ContractError("iconq predictor: target index out of range");
    Series s = running_series(running, &incoming, when, running[target].record);
    return model_.predict(s.x, s.target_index);
}

}  // namespace iconq
