#include "iconq/lstm.hpp"

#include <cmath>
#include <cstring>

namespace iconq {

namespace {

double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

}  // namespace

const double* lstm_forward(const LstmSpec& spec, const double* params,
                           std::span<const double* const> xs, LstmTrace& trace) {
    const int d = spec.input_dim;
    const int h = spec.hidden_dim;
    const int g4 = 4 * h;
    const int steps = static_cast<int>(xs.size());
    trace.steps = steps;
    if (steps == 0) return nullptr;

    const std::size_t need_g = static_cast<std::size_t>(steps) * g4;
    const std::size_t need_h = static_cast<std::size_t>(steps) * h;
    if (trace.gates.size() < need_g) trace.gates.resize(need_g);
    if (trace.cells.size() < need_h) trace.cells.resize(need_h);
    if (trace.tanh_cells.size() < need_h) trace.tanh_cells.resize(need_h);
    if (trace.hidden.size() < need_h) trace.hidden.resize(need_h);
    trace.inputs.assign(xs.begin(), xs.end());

    const double* w = params;
    const double* u = params + spec.w_count();
    const double* b = u + spec.u_count();

    const double* h_prev = nullptr;  // null means the zero state
    const double* c_prev = nullptr;
    for (int t = 0; t < steps; ++t) {
        double* z = trace.gates.data() + static_cast<std::size_t>(t) * g4;
        double* c = trace.cells.data() + static_cast<std::size_t>(t) * h;
        double* tc = trace.tanh_cells.data() + static_cast<std::size_t>(t) * h;
        double* hh = trace.hidden.data() + static_cast<std::size_t>(t) * h;
        const double* x = xs[t];

        for (int r = 0; r < g4; ++r) {
            double acc = b[r];
            const double* wr = w + static_cast<std::size_t>(r) * d;
            for (int k = 0; k < d; ++k) acc += wr[k] * x[k];
            if (h_prev) {
                const double* ur = u + static_cast<std::size_t>(r) * h;
                for (int k = 0; k < h; ++k) acc += ur[k] * h_prev[k];
            }
            z[r] = acc;
        }
        double* gi = z;
        double* gf = z + h;
        double* gc = z + 2 * h;
        double* go = z + 3 * h;
        for (int k = 0; k < h; ++k) {
            gi[k] = sigmoid(gi[k]);
            gf[k] = sigmoid(gf[k]);
            gc[k] = std::tanh(gc[k]);
            go[k] = sigmoid(go[k]);
            const double cp = c_prev ? c_prev[k] : 0.0;
            c[k] = gf[k] * cp + gi[k] * gc[k];
            tc[k] = std::tanh(c[k]);
            hh[k] = go[k] * tc[k];
        }
        h_prev = hh;
        c_prev = c;
    }
    return trace.hidden.data() + static_cast<std::size_t>(steps - 1) * h;
}

void lstm_backward(const LstmSpec& spec, const double* params, LstmTrace& trace,
                   const double* d_h_final, double* grad) {
    const int d = spec.input_dim;
    const int h = spec.hidden_dim;
    const int g4 = 4 * h;
    const int steps = trace.steps;
    if (steps == 0) return;

    if (trace.d_hidden.size() < static_cast<std::size_t>(h)) trace.d_hidden.resize(h);
    if (trace.d_cell.size() < static_cast<std::size_t>(h)) trace.d_cell.resize(h);
    if (trace.d_gates.size() < static_cast<std::size_t>(g4)) trace.d_gates.resize(g4);
    double* dh = trace.d_hidden.data();
    double* dc = trace.d_cell.data();
    double* dz = trace.d_gates.data();
    std::memcpy(dh, d_h_final, sizeof(double) * h);
    std::memset(dc, 0, sizeof(double) * h);

    const double* u = params + spec.w_count();
    double* gw = grad;
    double* gu = grad + spec.w_count();
    double* gb = gu + spec.u_count();

    for (int t = steps - 1; t >= 0; --t) {
        const double* z = trace.gates.data() + static_cast<std::size_t>(t) * g4;
        const double* tc = trace.tanh_cells.data() + static_cast<std::size_t>(t) * h;
        const double* gi = z;
        const double* gf = z + h;
        const double* gc = z + 2 * h;
        const double* go = z + 3 * h;
        const double* c_prev =
            t > 0 ? trace.cells.data() + static_cast<std::size_t>(t - 1) * h : nullptr;
        const double* h_prev =
            t > 0 ? trace.hidden.data() + static_cast<std::size_t>(t - 1) * h : nullptr;

        double* dzi = dz;
        double* dzf = dz + h;
        double* dzc = dz + 2 * h;
        double* dzo = dz + 3 * h;
        for (int k = 0; k < h; ++k) {
            const double d_out = dh[k] * tc[k];
            const double d_ct = dc[k] + dh[k] * go[k] * (1.0 - tc[k] * tc[k]);
            const double cp = c_prev ? c_prev[k] : 0.0;
            dzi[k] = d_ct * gc[k] * gi[k] * (1.0 - gi[k]);
            dzf[k] = d_ct * cp * gf[k] * (1.0 - gf[k]);
            dzc[k] = d_ct * gi[k] * (1.0 - gc[k] * gc[k]);
            dzo[k] = d_out * go[k] * (1.0 - go[k]);
            dc[k] = d_ct * gf[k];
        }

        const double* x = trace.inputs[static_cast<std::size_t>(t)];
        for (int r = 0; r < g4; ++r) {
            const double dr = dz[r];
            if (dr == 0.0) continue;
            double* gwr = gw + static_cast<std::size_t>(r) * d;
            for (int k = 0; k < d; ++k) gwr[k] += dr * x[k];
            if (h_prev) {
                double* gur = gu + static_cast<std::size_t>(r) * h;
                for (int k = 0; k < h; ++k) gur[k] += dr * h_prev[k];
            }
            gb[r] += dr;
        }
        // dh_{t-1} = U^T dz
        if (t > 0) {
            for (int k = 0; k < h; ++k) dh[k] = 0.0;
            for (int r = 0; r < g4; ++r) {
                const double dr = dz[r];
                if (dr == 0.0) continue;
                const double* ur = u + static_cast<std::size_t>(r) * h;
                for (int k = 0; k < h; ++k) dh[k] += ur[k] * dr;
            }
        }
    }
}

}  // namespace iconq
