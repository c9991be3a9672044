#include "medgraph/encoder.hpp"

#include <algorithm>

namespace medgraph {

void init_encoder_params(ParamStore& ps, const EncoderDims& dims, std::mt19937_64& rng) {
    if (dims.d_v < 1 || dims.d_c < 1 || dims.m < 1 || dims.L < 1)
        throw std::invalid_argument("init_encoder_params: dimensions must be >= 1");
    ps.add("enc.w_v", glorot_init(dims.d_v, dims.m, rng));
    ps.add("enc.w_c", glorot_init(dims.d_c, dims.m, rng));
    ps.add("enc.w_mu", glorot_init(dims.m, dims.L, rng));
    ps.add("enc.b_mu", Array(dims.L, 1));
    ps.add("enc.w_sigma", glorot_init(dims.m, dims.L, rng));
    ps.add("enc.b_sigma", Array(dims.L, 1));
}

EncoderVars bind_encoder(Tape& t, ParamStore& ps, std::unordered_map<std::string, Var>& leaves) {
    auto leaf = [&](const std::string& name) {
        auto it = leaves.find(name);
        if (it != leaves.end()) return it->second;
        Var v = t.leaf(ps.at(name).value);
        leaves.emplace(name, v);
        return v;
    };
    EncoderVars e;
    e.w_v_t = t.transpose(leaf("enc.w_v"));
    e.w_c_t = t.transpose(leaf("enc.w_c"));
    e.w_mu_t = t.transpose(leaf("enc.w_mu"));
    e.w_sigma_t = t.transpose(leaf("enc.w_sigma"));
    e.b_mu = leaf("enc.b_mu");
    e.b_sigma = leaf("enc.b_sigma");
    return e;
}

GaussianVars encode(Tape& t, const EncoderVars& enc, const std::vector<double>& attrs, NodeKind kind) {
    Var x = t.leaf(Array::vector(attrs));
    Var u = t.matmul(kind == NodeKind::Visit ? enc.w_v_t : enc.w_c_t, x);
    GaussianVars g;
    g.mu = t.add(t.matmul(enc.w_mu_t, u), enc.b_mu);
    // ELU(.) + 1 maps into (0, inf)
    g.sigma2 = t.elu_plus_one(t.add(t.matmul(enc.w_sigma_t, u), enc.b_sigma));
    return g;
}

GaussianEmbedding encode_value(const ParamStore& ps, const std::vector<double>& attrs, NodeKind kind) {
    Tape t;
    std::unordered_map<std::string, Var> leaves;
    // const_cast is safe: forward-only, the tape copies values out of the store
    EncoderVars enc = bind_encoder(t, const_cast<ParamStore&>(ps), leaves);
    GaussianVars g = encode(t, enc, attrs, kind);
    return GaussianEmbedding{t.val(g.mu).data, t.val(g.sigma2).data};
}

Var w2_distance(Tape& t, const GaussianVars& a, const GaussianVars& b) {
    Var dmu = t.sub(a.mu, b.mu);
    Var dsigma = t.sub(t.sqrt(a.sigma2), t.sqrt(b.sigma2));
    return t.sqrt(t.add(t.squared_norm(dmu), t.squared_norm(dsigma)));
}

double w2_distance_value(const GaussianEmbedding& a, const GaussianEmbedding& b) {
    if (a.mu.size() != b.mu.size()) throw std::runtime_error("w2_distance: dimension mismatch");
    double s = 0.0;
    for (size_t i = 0; i < a.mu.size(); ++i) {
        double dm = a.mu[i] - b.mu[i];
        double ds = std::sqrt(a.sigma2[i]) - std::sqrt(b.sigma2[i]);
        s += dm * dm + ds * ds;
    }
    return std::sqrt(s);
}

Var edge_probability(Tape& t, const GaussianVars& v, const GaussianVars& c) {
    return t.sigmoid(t.scale(w2_distance(t, v, c), -1.0));
}

double edge_probability_value(const GaussianEmbedding& v, const GaussianEmbedding& c) {
    return detail::stable_sigmoid(-w2_distance_value(v, c));
}

NegativeSampler::NegativeSampler(const BipartiteGraph& g) : graph_(g) {
    weights_.reserve(g.codes.size());
    for (int deg : g.code_degree) weights_.push_back(std::pow(static_cast<double>(deg), 0.75));
    cdf_.resize(weights_.size());
    double acc = 0.0;
    for (size_t i = 0; i < weights_.size(); ++i) {
        acc += weights_[i];
        cdf_[i] = acc;
    }
}

std::vector<int> NegativeSampler::sample(std::mt19937_64& rng, const Visit& visit, int k) const {
    if (k < 1) throw std::invalid_argument("sample_negatives: K must be >= 1");
    const int n_codes = static_cast<int>(graph_.codes.size());
    if (static_cast<int>(visit.codes.size()) >= n_codes)
        throw std::runtime_error("sample_negatives: visit \"" + visit.id + "\" is linked to all codes");

    auto linked = [&](int c) {
        return std::binary_search(visit.codes.begin(), visit.codes.end(), c);
    };

    std::vector<int> out;
    out.reserve(k);
    const double total = cdf_.back();
    std::uniform_real_distribution<double> unif(0.0, total);
    const int max_rejects = 64;
    for (int i = 0; i < k; ++i) {
        int picked = -1;
        if (total > 0.0) {
            for (int tries = 0; tries < max_rejects; ++tries) {
                double u = unif(rng);
                int c = static_cast<int>(std::lower_bound(cdf_.begin(), cdf_.end(), u) - cdf_.begin());
                c = std::min(c, n_codes - 1);
                if (!linked(c)) {
                    picked = c;
                    break;
                }
            }
        }
        if (picked < 0) {
            // rejection stalled (or all mass sits on linked codes):
            // renormalize exactly over the unlinked support
            double mass = 0.0;
            bool any_weight = false;
            for (int c = 0; c < n_codes; ++c)
                if (!linked(c)) {
                    mass += weights_[c];
                    any_weight = any_weight || weights_[c] > 0.0;
                }
            double u = std::uniform_real_distribution<double>(0.0, any_weight ? mass : 1.0)(rng);
            double acc = 0.0;
            for (int c = 0; c < n_codes; ++c) {
                if (linked(c)) continue;
                acc += any_weight ? weights_[c] : 1.0 / (n_codes - static_cast<int>(visit.codes.size()));
                picked = c;
                if (acc >= u) break;
            }
        }
        out.push_back(picked);
    }
    return out;
}

Var structural_loss(Tape& t, const EncoderVars& enc, const Cohort& cohort,
                    const std::vector<std::pair<int, int>>& positives,
                    const std::vector<std::vector<int>>& negatives) {
    if (positives.empty()) throw std::invalid_argument("structural_loss: empty batch");
    if (negatives.size() != positives.size())
        throw std::invalid_argument("structural_loss: negatives size mismatch");

    // one encode per distinct node in the batch
    std::unordered_map<int, GaussianVars> visit_emb, code_emb;
    auto visit_of = [&](int vi) -> GaussianVars {
        if (vi < 0 || vi >= static_cast<int>(cohort.graph.visits.size()))
            throw std::out_of_range("structural_loss: visit index " + std::to_string(vi));
        auto it = visit_emb.find(vi);
        if (it != visit_emb.end()) return it->second;
        GaussianVars g = encode(t, enc, cohort.graph.visits[vi]->attributes, NodeKind::Visit);
        visit_emb.emplace(vi, g);
        return g;
    };
    auto code_of = [&](int ci) -> GaussianVars {
        if (ci < 0 || ci >= static_cast<int>(cohort.graph.codes.size()))
            throw std::out_of_range("structural_loss: code index " + std::to_string(ci));
        auto it = code_emb.find(ci);
        if (it != code_emb.end()) return it->second;
        GaussianVars g = encode(t, enc, cohort.graph.codes[ci].attributes, NodeKind::Code);
        code_emb.emplace(ci, g);
        return g;
    };

    Var total;
    for (size_t i = 0; i < positives.size(); ++i) {
        auto [vi, ci] = positives[i];
        GaussianVars zv = visit_of(vi);
        // -log P(pos) = softplus(d)
        Var term = t.softplus(w2_distance(t, zv, code_of(ci)));
        for (int neg : negatives[i]) {
            // -log (1 - P(neg)) = softplus(-d)
            Var dneg = w2_distance(t, zv, code_of(neg));
            term = t.add(term, t.softplus(t.scale(dneg, -1.0)));
        }
        total = total.valid() ? t.add(total, term) : term;
    }
    return t.scale(total, 1.0 / static_cast<double>(positives.size()));
}

}  // namespace medgraph
