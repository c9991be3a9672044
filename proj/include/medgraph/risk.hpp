#pragma once

#include <unordered_map>

#include "medgraph/autodiff.hpp"
#include "medgraph/cohort.hpp"
#include "medgraph/params.hpp"

namespace medgraph {

enum class TaskLossMode { SoftmaxCE, PerClassBCE };

// head.w_s (s x m'), head.b_s (s)
void init_head_params(ParamStore& ps, int s, int m_prime, std::mt19937_64& rng);

struct HeadVars {
    Var w_s, b_s;
};

HeadVars bind_head(Tape& t, ParamStore& ps, std::unordered_map<std::string, Var>& leaves);

// yhat = softmax(W_s h + b_s)
Var predict(Tape& t, const HeadVars& head, Var h);

// Mean cross-entropy over the visits of one sequence. SoftmaxCE is the
// default -(1/T) sum y . log yhat; PerClassBCE additionally charges the
// (1-y) . log(1-yhat) complement term. Probabilities are clipped to
// [1e-9, 1-1e-9] inside the logs.
Var task_loss(Tape& t, const PatientSequence& seq, const std::vector<Var>& predictions,
              TaskLossMode mode);

}  // namespace medgraph
