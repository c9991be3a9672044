#pragma once

#include <random>
#include <unordered_map>

#include "medgraph/autodiff.hpp"
#include "medgraph/cohort.hpp"
#include "medgraph/params.hpp"

namespace medgraph {

enum class NodeKind { Visit, Code };

struct EncoderDims {
    int d_v = 0;
    int d_c = 0;
    int m = 256;  // intermediate width
    int L = 128;  // embedding width
};

// Parameter names used in the store: enc.w_v (D_v x m), enc.w_c (D_c x m),
// enc.w_mu (m x L), enc.b_mu (L), enc.w_sigma (m x L), enc.b_sigma (L).
void init_encoder_params(ParamStore& ps, const EncoderDims& dims, std::mt19937_64& rng);

// Per-tape handles; transposed weight nodes are created once at bind time.
struct EncoderVars {
    Var w_v_t, w_c_t;  // m x D_v, m x D_c
    Var w_mu_t, w_sigma_t;  // L x m
    Var b_mu, b_sigma;      // L x 1
};

EncoderVars bind_encoder(Tape& t, ParamStore& ps,
                         std::unordered_map<std::string, Var>& leaves);

struct GaussianVars {
    Var mu;      // L x 1
    Var sigma2;  // L x 1, strictly positive
};

// Plain-value Gaussian embedding, for export and metric code.
struct GaussianEmbedding {
    std::vector<double> mu;
    std::vector<double> sigma2;
};

GaussianVars encode(Tape& t, const EncoderVars& enc, const std::vector<double>& attrs, NodeKind kind);

// Forward-only convenience: runs encode on a scratch tape.
GaussianEmbedding encode_value(const ParamStore& ps, const std::vector<double>& attrs, NodeKind kind);

// W2 distance between diagonal Gaussians: Euclidean on concatenated means
// and standard deviations (sigma = sqrt of the stored variance).
Var w2_distance(Tape& t, const GaussianVars& a, const GaussianVars& b);
double w2_distance_value(const GaussianEmbedding& a, const GaussianEmbedding& b);

// P(edge) = sigmoid(-d)
Var edge_probability(Tape& t, const GaussianVars& v, const GaussianVars& c);
double edge_probability_value(const GaussianEmbedding& v, const GaussianEmbedding& c);

// Unigram^{3/4} negative sampler over codes not linked to the visit.
class NegativeSampler {
  public:
    explicit NegativeSampler(const BipartiteGraph& g);

    // K codes not linked to `visit`, drawn from the degree^{3/4} table.
    std::vector<int> sample(std::mt19937_64& rng, const Visit& visit, int k) const;

    const std::vector<double>& weights() const { return weights_; }

  private:
    const BipartiteGraph& graph_;
    std::vector<double> weights_;  // degree^{3/4} per code
    std::vector<double> cdf_;
};

// Negative-sampled structural loss over a batch of positive edges:
//   (1/B) sum_pos [ softplus(d_pos) + sum_j softplus(-d_neg_j) ]
// which is -(1/B) sum [ log P(pos) + sum log(1 - P(neg)) ].
// Embeddings are computed once per distinct node in the batch.
Var structural_loss(Tape& t, const EncoderVars& enc, const Cohort& cohort,
                    const std::vector<std::pair<int, int>>& positives,
                    const std::vector<std::vector<int>>& negatives);

}  // namespace medgraph
