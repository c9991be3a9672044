#include "medgraph/temporal.hpp"

namespace medgraph {

namespace {

std::vector<double> gap_features(double gap) {
    return {gap, std::log1p(gap)};
}

Var tanh_var(Tape& t, Var x) {
    // tanh(x) = 2 sigmoid(2x) - 1
    return t.add_const(t.scale(t.sigmoid(t.scale(x, 2.0)), 2.0), -1.0);
}

Var slice_gate(Tape& t, Var z, int gate, int m) {
    return t.slice(z, gate * m, m);
}

}  // namespace

void init_temporal_params(ParamStore& ps, const TemporalDims& dims, CellKind cell, std::mt19937_64& rng) {
    const int mp = dims.m_prime;
    if (mp < 1) throw std::invalid_argument("init_temporal_params: m' must be >= 1");
    // gap features arrive in days ((gap, log1p(gap)), tens to hundreds);
    // their input columns start small so the cell is not saturated at init
    constexpr double kGapColScale[2] = {1.0 / 30.0, 0.25};
    if (cell == CellKind::Plain) {
        ps.add("tp.w_tv", glorot_init(mp, dims.L, rng));
        Array wg = glorot_init(mp, dims.d_t, rng);
        for (int i = 0; i < mp; ++i)
            for (int j = 0; j < dims.d_t; ++j) wg.at(i, j) *= kGapColScale[std::min(j, 1)];
        ps.add("tp.w_g", std::move(wg));
        ps.add("tp.w_h", glorot_init(mp, mp, rng));
        ps.add("tp.b_h", Array(mp, 1));
    } else {
        Array wx = glorot_init(4 * mp, dims.L + dims.d_t, rng);
        for (int i = 0; i < 4 * mp; ++i)
            for (int j = 0; j < dims.d_t; ++j) wx.at(i, dims.L + j) *= kGapColScale[std::min(j, 1)];
        ps.add("tp.wx", std::move(wx));
        ps.add("tp.wh", glorot_init(4 * mp, mp, rng));
        Array b(4 * mp, 1);
        for (int i = mp; i < 2 * mp; ++i) b.data[i] = 1.0;  // forget gate bias
        ps.add("tp.b", std::move(b));
    }
    ps.add("tp.v_t", glorot_init(mp, 1, rng));
    // gaps can span hundreds of days; a small slope keeps exp(w_t * gap)
    // and the initial likelihood finite
    ps.add("tp.w_t", Array::scalar(1e-3));
    ps.add("tp.b_t", Array::scalar(0.0));
}

TemporalVars bind_temporal(Tape& t, ParamStore& ps, CellKind cell,
                           std::unordered_map<std::string, Var>& leaves) {
    auto leaf = [&](const std::string& name) {
        auto it = leaves.find(name);
        if (it != leaves.end()) return it->second;
        Var v = t.leaf(ps.at(name).value);
        leaves.emplace(name, v);
        return v;
    };
    TemporalVars tp;
    tp.cell = cell;
    if (cell == CellKind::Plain) {
        tp.w_tv = leaf("tp.w_tv");
        tp.w_g = leaf("tp.w_g");
        tp.w_h = leaf("tp.w_h");
        tp.b_h = leaf("tp.b_h");
        tp.m_prime = ps.at("tp.b_h").value.rows;
    } else {
        tp.wx = leaf("tp.wx");
        tp.wh = leaf("tp.wh");
        tp.b = leaf("tp.b");
        tp.m_prime = ps.at("tp.b").value.rows / 4;
    }
    tp.v_t = leaf("tp.v_t");
    tp.w_t = leaf("tp.w_t");
    tp.b_t = leaf("tp.b_t");
    return tp;
}

SequenceStateVars initial_state(Tape& t, int m_prime) {
    SequenceStateVars s;
    s.h = t.leaf(Array(m_prime, 1));
    s.c = t.leaf(Array(m_prime, 1));
    return s;
}

Var event_marker(Tape& t, const GaussianVars& z, MarkerNoise mode, std::mt19937_64& rng) {
    if (mode == MarkerNoise::Off) return z.mu;
    const Array& mu = t.val(z.mu);
    Array eps(mu.rows, 1);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (double& x : eps.data) x = normal(rng);
    Var eps_v = t.leaf(std::move(eps));
    Var noise = mode == MarkerNoise::Variance ? t.mul(eps_v, z.sigma2)
                                              : t.mul(eps_v, t.sqrt(z.sigma2));
    return t.add(z.mu, noise);
}

SequenceStateVars step(Tape& t, const TemporalVars& tp, const SequenceStateVars& state,
                       Var e, double gap) {
    if (gap < 0) throw std::invalid_argument("step: negative gap");
    Var g = t.leaf(Array::vector(gap_features(gap)));
    SequenceStateVars out;
    if (tp.cell == CellKind::Plain) {
        Var pre = t.add(t.add(t.matmul(tp.w_tv, e), t.matmul(tp.w_g, g)),
                        t.add(t.matmul(tp.w_h, state.h), tp.b_h));
        out.h = t.relu(pre);
        out.c = state.c;
    } else {
        Var x = t.concat(e, g);
        Var z = t.add(t.add(t.matmul(tp.wx, x), t.matmul(tp.wh, state.h)), tp.b);
        const int m = tp.m_prime;
        Var gi = t.sigmoid(slice_gate(t, z, 0, m));
        Var gf = t.sigmoid(slice_gate(t, z, 1, m));
        Var gc = tanh_var(t, slice_gate(t, z, 2, m));
        Var go = t.sigmoid(slice_gate(t, z, 3, m));
        out.c = t.add(t.mul(gf, state.c), t.mul(gi, gc));
        out.h = t.mul(go, tanh_var(t, out.c));
    }
    return out;
}

double intensity_value(double a, double w_t, double b_t, double dt) {
    if (dt < 0) throw std::invalid_argument("intensity: t must be >= t_last");
    return std::exp(a + w_t * dt + b_t);
}

double log_density_value(double a, double w_t, double b_t, double dt) {
    if (dt < 0) throw std::invalid_argument("log_density: t must be >= t_last");
    return a + b_t + w_t * dt - std::exp(a + b_t) * dt * detail::phi(w_t * dt);
}

namespace {

double adaptive_simpson(const std::function<double(double)>& f, double a, double b,
                        double fa, double fm, double fb, double whole, double tol, int depth) {
    double m = 0.5 * (a + b);
    double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
    double flm = f(lm), frm = f(rm);
    double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    double delta = left + right - whole;
    if (depth <= 0 || std::abs(delta) <= 15.0 * tol)
        return left + right + delta / 15.0;
    return adaptive_simpson(f, a, m, fa, flm, fm, left, tol * 0.5, depth - 1) +
           adaptive_simpson(f, m, b, fm, frm, fb, right, tol * 0.5, depth - 1);
}

double integrate(const std::function<double(double)>& f, double a, double b, double tol) {
    double fa = f(a), fb = f(b), fm = f(0.5 * (a + b));
    double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    return adaptive_simpson(f, a, b, fa, fm, fb, whole, tol, 48);
}

}  // namespace

double predict_next_gap(double a, double w_t, double b_t) {
    if (w_t <= 0) throw std::runtime_error("predict_next_time: improper density (w_t <= 0)");

    auto log_f = [&](double dt) { return log_density_value(a, w_t, b_t, dt); };
    // find a cutoff where the integrand mass is negligible
    double hi = 1.0 / std::max(std::exp(a + b_t), 1e-12);  // ~mean of the constant-rate limit
    while (log_f(hi) + std::log1p(hi) > -40.0) hi *= 2.0;

    auto integrand = [&](double dt) { return dt * std::exp(log_f(dt)); };
    // coarse pass for scale, then refine to rel tol 1e-6
    double rough = integrate(integrand, 0.0, hi, 1e-6);
    double tol = std::max(std::abs(rough), 1e-12) * 1e-6;
    return integrate(integrand, 0.0, hi, tol);
}

Var sequence_nll(Tape& t, const TemporalVars& tp, const PatientSequence& seq,
                 const std::vector<Var>& markers, bool constant_gaps,
                 std::vector<SequenceStateVars>* states_out) {
    const size_t n = seq.visits.size();
    if (n < 2) throw std::invalid_argument("sequence_nll: sequence needs at least two visits");
    if (markers.size() != n) throw std::invalid_argument("sequence_nll: marker count mismatch");

    std::vector<double> gaps = time_gaps(seq);

    SequenceStateVars state = initial_state(t, tp.m_prime);
    Var nll;
    for (size_t i = 0; i < n; ++i) {
        double in_gap = i == 0 ? 0.0 : gaps[i - 1];
        state = step(t, tp, state, markers[i], constant_gaps ? 1.0 : in_gap);
        if (states_out) states_out->push_back(state);
        if (i + 1 < n) {
            Var a = t.dot(tp.v_t, state.h);
            Var term = t.pp_log_density(a, tp.w_t, tp.b_t, gaps[i]);
            nll = nll.valid() ? t.sub(nll, term) : t.scale(term, -1.0);
        }
    }
    return nll;
}

}  // namespace medgraph
