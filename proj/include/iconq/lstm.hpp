#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace iconq {

// One directional LSTM recurrence over a contiguous parameter block laid out
// as W [4H x D] row-major, then U [4H x H], then b [4H]. Gate row order
// within the 4H dimension: input, forget, candidate, output. The recurrence
// starts from h = c = 0.
struct LstmSpec {
    int input_dim = 0;
    int hidden_dim = 0;

    std::size_t w_count() const {
        return static_cast<std::size_t>(4 * hidden_dim) * input_dim;
    }
    std::size_t u_count() const {
        return static_cast<std::size_t>(4 * hidden_dim) * hidden_dim;
    }
    std::size_t param_count() const { return w_count() + u_count() + 4 * hidden_dim; }
};

// Per-sequence activation cache written by lstm_forward and read back by
// lstm_backward. Buffers grow to the longest sequence seen and are reused.
struct LstmTrace {
    std::vector<double> gates;         // T x 4H, post-activation
    std::vector<double> cells;         // T x H
    std::vector<double> tanh_cells;    // T x H
    std::vector<double> hidden;        // T x H
    std::vector<const double*> inputs; // T aliases into caller-owned storage
    int steps = 0;

    // Scratch for the backward sweep, kept here so repeated calls do not
    // allocate.
    std::vector<double> d_hidden;
    std::vector<double> d_cell;
    std::vector<double> d_gates;
};

// Runs the recurrence over xs (each pointing at input_dim doubles) and
// returns a pointer to the final hidden state (H doubles) inside the trace.
// Returns nullptr for an empty sequence; callers treat that as the zero
// state.
const double* lstm_forward(const LstmSpec& spec, const double* params,
                           std::span<const double* const> xs, LstmTrace& trace);

// Accumulates d(loss)/d(params) into grad (same layout as params) given
// d(loss)/d(h_T), using the activations cached by the matching
// lstm_forward call. Loss is assumed to depend on the final hidden state
// only.
void lstm_backward(const LstmSpec& spec, const double* params, LstmTrace& trace,
                   const double* d_h_final, double* grad);

}  // namespace iconq
