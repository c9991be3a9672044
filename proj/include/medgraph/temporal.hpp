#pragma once

#include <random>
#include <unordered_map>

#include "medgraph/cohort.hpp"
#include "medgraph/encoder.hpp"

namespace medgraph {

enum class CellKind { Plain, Gated };

enum class MarkerNoise { Variance, Stddev, Off };

struct TemporalDims {
    int L = 128;       // marker width
    int d_t = 2;       // gap feature width: (gap, log1p(gap))
    int m_prime = 64;  // hidden width
};

// Plain cell: tp.w_tv (m' x L), tp.w_g (m' x d_t), tp.w_h (m' x m'), tp.b_h.
// Gated cell: tp.wx (4m' x (L + d_t)), tp.wh (4m' x m'), tp.b (4m'),
//   gate order i, f, g, o; forget-gate bias initialized to 1.
// Intensity head: tp.v_t (m' x 1), tp.w_t, tp.b_t (scalars).
void init_temporal_params(ParamStore& ps, const TemporalDims& dims, CellKind cell, std::mt19937_64& rng);

struct TemporalVars {
    CellKind cell = CellKind::Gated;
    // plain
    Var w_tv, w_g, w_h, b_h;
    // gated
    Var wx, wh, b;
    // intensity head
    Var v_t, w_t, b_t;
    int m_prime = 0;
};

TemporalVars bind_temporal(Tape& t, ParamStore& ps, CellKind cell,
                           std::unordered_map<std::string, Var>& leaves);

struct SequenceStateVars {
    Var h;  // m' x 1
    Var c;  // m' x 1, gated cell memory (unused by the plain cell)
};

SequenceStateVars initial_state(Tape& t, int m_prime);

// Event marker e = mu + eps (.) sigma^2; Stddev mode scales the noise by
// sigma instead, Off suppresses it so e = mu.
Var event_marker(Tape& t, const GaussianVars& z, MarkerNoise mode, std::mt19937_64& rng);

// One recurrence update with marker e and the gap since the previous visit.
SequenceStateVars step(Tape& t, const TemporalVars& tp, const SequenceStateVars& state,
                       Var e, double gap);

// Plain-value intensity / density at elapsed time dt >= 0 given the scalar
// history projection a = v_t . h.
double intensity_value(double a, double w_t, double b_t, double dt);
double log_density_value(double a, double w_t, double b_t, double dt);

// Expected time to the next event via adaptive quadrature (rel tol 1e-6);
// requires w_t > 0 so the density is proper.
double predict_next_gap(double a, double w_t, double b_t);

// Negative log-likelihood of the observed gaps of one sequence: sum over
// the T-1 observed gaps with the hidden state advanced by step.
// markers[i] is the event marker of visit i; gaps from the visit timestamps,
// or forced to 1 when constant_gaps is set (time-series ablation).
Var sequence_nll(Tape& t, const TemporalVars& tp, const PatientSequence& seq,
                 const std::vector<Var>& markers, bool constant_gaps,
                 std::vector<SequenceStateVars>* states_out = nullptr);

}  // namespace medgraph
