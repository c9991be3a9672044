#pragma once

#include <string>

#include "medgraph/cohort.hpp"
#include "medgraph/encoder.hpp"
#include "medgraph/risk.hpp"
#include "medgraph/temporal.hpp"

namespace medgraph {

struct TrainConfig {
    double alpha = 1.0;
    double beta = 1.0;
    double gamma = 0.0;

    int L = 128;        // embedding width
    int m = 256;        // encoder intermediate width
    int m_prime = 64;   // recurrent hidden width
    int K = 10;         // negative edges per positive
    double lr = 0.001;
    int batch_visits = 128;
    int batch_seqs = 32;
    int epochs = 10;
    uint64_t seed = 1;

    CellKind cell = CellKind::Gated;
    MarkerNoise marker_noise = MarkerNoise::Variance;
    TaskLossMode task_mode = TaskLossMode::SoftmaxCE;
    std::string task = "none";   // label key; "none" forces gamma = 0 semantics
    bool constant_gaps = false;  // temporal ablation: treat visits as equally spaced
    double clip_norm = 0.0;

    void validate() const;
    std::string to_json() const;
    static TrainConfig from_json(const std::string& text);
};

struct TrainHistory {
    std::vector<double> total, structural, temporal, task;
};

// All trainable arrays for the configured architecture, deterministically
// initialized from cfg.seed.
ParamStore init_params(const Cohort& cohort, const TrainConfig& cfg);

struct LossBreakdown {
    Var total;
    double structural = 0.0;
    double temporal = 0.0;
    double task = 0.0;
};

// alpha L_struc + beta L_temp + gamma L_tsk over one minibatch; terms with a
// zero coefficient are not evaluated. Marker noise is drawn from rng.
LossBreakdown unified_loss(Tape& t, std::unordered_map<std::string, Var>& leaves,
                           ParamStore& ps, const Cohort& cohort, const TrainConfig& cfg,
                           const std::vector<std::pair<int, int>>& struct_batch,
                           const std::vector<std::vector<int>>& negatives,
                           const std::vector<const PatientSequence*>& seq_batch,
                           std::mt19937_64& rng);

TrainHistory train(const Cohort& cohort, const TrainConfig& cfg, ParamStore& ps);

// Deterministic-eval per-visit class probabilities (marker noise off),
// indexed by global visit index.
std::vector<std::vector<double>> predict_visit_probs(const ParamStore& ps, const Cohort& cohort,
                                                     const TrainConfig& cfg);

// Gaussian embeddings for every node, visits first then codes, index order.
struct NodeEmbedding {
    std::string id;
    NodeKind kind;
    GaussianEmbedding emb;
};
std::vector<NodeEmbedding> all_embeddings(const ParamStore& ps, const Cohort& cohort);

// TSV: node_id, kind, mu (L cols), sigma2 (L cols)
void export_embeddings(const ParamStore& ps, const Cohort& cohort, const std::string& path);

void save_trained(const ParamStore& ps, const TrainConfig& cfg, const TrainHistory& hist,
                  const std::string& path);
struct LoadedModel {
    ParamStore params;
    TrainConfig config;
    TrainHistory history;
};
LoadedModel load_trained(const std::string& path);

}  // namespace medgraph
