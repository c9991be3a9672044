#include "medgraph/risk.hpp"

namespace medgraph {

namespace {
constexpr double kProbEps = 1e-9;
}

void init_head_params(ParamStore& ps, int s, int m_prime, std::mt19937_64& rng) {
    if (s < 2) throw std::invalid_argument("init_head_params: softmax head needs s >= 2 classes");
    ps.add("head.w_s", glorot_init(s, m_prime, rng));
    ps.add("head.b_s", Array(s, 1));
}

HeadVars bind_head(Tape& t, ParamStore& ps, std::unordered_map<std::string, Var>& leaves) {
    auto leaf = [&](const std::string& name) {
        auto it = leaves.find(name);
        if (it != leaves.end()) return it->second;
        Var v = t.leaf(ps.at(name).value);
        leaves.emplace(name, v);
        return v;
    };
    return HeadVars{leaf("head.w_s"), leaf("head.b_s")};
}

Var predict(Tape& t, const HeadVars& head, Var h) {
    return t.softmax(t.add(t.matmul(head.w_s, h), head.b_s));
}

Var task_loss(Tape& t, const PatientSequence& seq, const std::vector<Var>& predictions,
              TaskLossMode mode) {
    const size_t n = seq.visits.size();
    if (predictions.size() != n) throw std::invalid_argument("task_loss: prediction count mismatch");

    Var total;
    for (size_t i = 0; i < n; ++i) {
        const Visit& v = seq.visits[i];
        if (!v.label) throw std::runtime_error("task_loss: visit \"" + v.id + "\" has no label");
        Array y(static_cast<int>(v.label->size()), 1);
        for (size_t k = 0; k < v.label->size(); ++k) y.data[k] = (*v.label)[k];
        Var yv = t.leaf(std::move(y));

        Var yhat = t.clip(predictions[i], kProbEps, 1.0 - kProbEps);
        Var term = t.dot(yv, t.log(yhat));
        if (mode == TaskLossMode::PerClassBCE) {
            Var one_minus_y = t.add_const(t.scale(yv, -1.0), 1.0);
            Var one_minus_yhat = t.add_const(t.scale(yhat, -1.0), 1.0);
            term = t.add(term, t.dot(one_minus_y, t.log(one_minus_yhat)));
        }
        total = total.valid() ? t.add(total, term) : term;
    }
    return t.scale(total, -1.0 / static_cast<double>(n));
}

}  // namespace medgraph
