#include "medgraph/trainer.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>

#include <json.hpp>

namespace medgraph {

using nlohmann::json;

namespace {

std::string cell_name(CellKind c) { return c == CellKind::Plain ? "plain" : "gated"; }
CellKind cell_from(const std::string& s) {
    if (s == "plain") return CellKind::Plain;
    if (s == "gated") return CellKind::Gated;
    throw std::runtime_error("unknown cell kind: " + s);
}
std::string noise_name(MarkerNoise n) {
    switch (n) {
        case MarkerNoise::Variance: return "variance";
        case MarkerNoise::Stddev: return "stddev";
        default: return "off";
    }
}
MarkerNoise noise_from(const std::string& s) {
    if (s == "variance") return MarkerNoise::Variance;
    if (s == "stddev") return MarkerNoise::Stddev;
    if (s == "off") return MarkerNoise::Off;
    throw std::runtime_error("unknown marker noise mode: " + s);
}
std::string mode_name(TaskLossMode m) { return m == TaskLossMode::SoftmaxCE ? "softmax-ce" : "per-class-bce"; }
TaskLossMode mode_from(const std::string& s) {
    if (s == "softmax-ce") return TaskLossMode::SoftmaxCE;
    if (s == "per-class-bce") return TaskLossMode::PerClassBCE;
    throw std::runtime_error("unknown task loss mode: " + s);
}

}  // namespace

void TrainConfig::validate() const {
    if (alpha < 0 || beta < 0 || gamma < 0)
        throw std::runtime_error("TrainConfig: coefficients must be nonnegative");
    if (alpha + beta + gamma <= 0)
        throw std::runtime_error("TrainConfig: alpha + beta + gamma must be positive");
    if (L < 1 || m < 1 || m_prime < 1) throw std::runtime_error("TrainConfig: widths must be >= 1");
    if (K < 1) throw std::runtime_error("TrainConfig: K must be >= 1");
    if (batch_visits < 1 || batch_seqs < 1) throw std::runtime_error("TrainConfig: batch sizes must be >= 1");
    if (epochs < 0) throw std::runtime_error("TrainConfig: epochs must be >= 0");
    if (lr <= 0) throw std::runtime_error("TrainConfig: lr must be positive");
    if (gamma > 0 && task == "none")
        throw std::runtime_error("TrainConfig: gamma > 0 requires a task");
}

std::string TrainConfig::to_json() const {
    json j;
    j["alpha"] = alpha;
    j["beta"] = beta;
    j["gamma"] = gamma;
    j["L"] = L;
    j["m"] = m;
    j["m_prime"] = m_prime;
    j["K"] = K;
    j["lr"] = lr;
    j["batch_visits"] = batch_visits;
    j["batch_seqs"] = batch_seqs;
    j["epochs"] = epochs;
    j["seed"] = seed;
    j["cell"] = cell_name(cell);
    j["marker_noise"] = noise_name(marker_noise);
    j["task_mode"] = mode_name(task_mode);
    j["task"] = task;
    j["constant_gaps"] = constant_gaps;
    j["clip_norm"] = clip_norm;
    return j.dump();
}

TrainConfig TrainConfig::from_json(const std::string& text) {
    json j = json::parse(text);
    TrainConfig c;
    c.alpha = j.value("alpha", c.alpha);
    c.beta = j.value("beta", c.beta);
    c.gamma = j.value("gamma", c.gamma);
    c.L = j.value("L", c.L);
    c.m = j.value("m", c.m);
    c.m_prime = j.value("m_prime", c.m_prime);
    c.K = j.value("K", c.K);
    c.lr = j.value("lr", c.lr);
    c.batch_visits = j.value("batch_visits", c.batch_visits);
    c.batch_seqs = j.value("batch_seqs", c.batch_seqs);
    c.epochs = j.value("epochs", c.epochs);
    c.seed = j.value("seed", c.seed);
    if (j.contains("cell")) c.cell = cell_from(j["cell"].get<std::string>());
    if (j.contains("marker_noise")) c.marker_noise = noise_from(j["marker_noise"].get<std::string>());
    if (j.contains("task_mode")) c.task_mode = mode_from(j["task_mode"].get<std::string>());
    c.task = j.value("task", c.task);
    c.constant_gaps = j.value("constant_gaps", c.constant_gaps);
    c.clip_norm = j.value("clip_norm", c.clip_norm);
    return c;
}

ParamStore init_params(const Cohort& cohort, const TrainConfig& cfg) {
    cfg.validate();
    std::mt19937_64 rng(cfg.seed);
    ParamStore ps;
    EncoderDims ed{cohort.dim_visit, cohort.dim_code, cfg.m, cfg.L};
    init_encoder_params(ps, ed, rng);
    TemporalDims td{cfg.L, 2, cfg.m_prime};
    init_temporal_params(ps, td, cfg.cell, rng);
    if (cfg.gamma > 0) {
        if (cohort.dim_label < 2)
            throw std::runtime_error("init_params: task supervision needs labels with s >= 2");
        init_head_params(ps, cohort.dim_label, cfg.m_prime, rng);
    }
    return ps;
}

namespace {

// states for one sequence, with markers drawn on the tape
struct SequenceForward {
    std::vector<Var> markers;
    std::vector<SequenceStateVars> states;
    Var nll;  // valid only when computed
};

SequenceForward run_sequence(Tape& t, const EncoderVars& enc, const TemporalVars& tp,
                             const PatientSequence& seq, const TrainConfig& cfg,
                             bool want_nll, std::mt19937_64& rng) {
    SequenceForward out;
    for (const Visit& v : seq.visits) {
        GaussianVars z = encode(t, enc, v.attributes, NodeKind::Visit);
        out.markers.push_back(event_marker(t, z, cfg.marker_noise, rng));
    }
    if (want_nll) {
        out.nll = sequence_nll(t, tp, seq, out.markers, cfg.constant_gaps, &out.states);
    } else {
        std::vector<double> gaps = time_gaps(seq);
        SequenceStateVars state = initial_state(t, tp.m_prime);
        for (size_t i = 0; i < seq.visits.size(); ++i) {
            double in_gap = i == 0 ? 0.0 : gaps[i - 1];
            state = step(t, tp, state, out.markers[i], cfg.constant_gaps ? 1.0 : in_gap);
            out.states.push_back(state);
        }
    }
    return out;
}

}  // namespace

LossBreakdown unified_loss(Tape& t, std::unordered_map<std::string, Var>& leaves,
                           ParamStore& ps, const Cohort& cohort, const TrainConfig& cfg,
                           const std::vector<std::pair<int, int>>& struct_batch,
                           const std::vector<std::vector<int>>& negatives,
                           const std::vector<const PatientSequence*>& seq_batch,
                           std::mt19937_64& rng) {
    cfg.validate();
    LossBreakdown out;
    EncoderVars enc = bind_encoder(t, ps, leaves);

    Var total;
    auto add_term = [&](Var v, double coeff) {
        Var scaled = t.scale(v, coeff);
        total = total.valid() ? t.add(total, scaled) : scaled;
    };

    if (cfg.alpha > 0) {
        if (struct_batch.empty()) throw std::runtime_error("unified_loss: empty structural batch");
        Var ls = structural_loss(t, enc, cohort, struct_batch, negatives);
        out.structural = t.val(ls).item();
        add_term(ls, cfg.alpha);
    }

    const bool need_sequences = cfg.beta > 0 || cfg.gamma > 0;
    if (need_sequences) {
        if (seq_batch.empty()) throw std::runtime_error("unified_loss: empty sequence batch");
        TemporalVars tp = bind_temporal(t, ps, cfg.cell, leaves);
        HeadVars head;
        if (cfg.gamma > 0) head = bind_head(t, ps, leaves);

        Var temp_sum, task_sum;
        for (const PatientSequence* seq : seq_batch) {
            SequenceForward fwd = run_sequence(t, enc, tp, *seq, cfg, cfg.beta > 0, rng);
            if (cfg.beta > 0)
                temp_sum = temp_sum.valid() ? t.add(temp_sum, fwd.nll) : fwd.nll;
            if (cfg.gamma > 0) {
                std::vector<Var> preds;
                preds.reserve(fwd.states.size());
                for (const auto& st : fwd.states) preds.push_back(predict(t, head, st.h));
                Var lt = task_loss(t, *seq, preds, cfg.task_mode);
                task_sum = task_sum.valid() ? t.add(task_sum, lt) : lt;
            }
        }
        double inv = 1.0 / static_cast<double>(seq_batch.size());
        if (cfg.beta > 0) {
            Var lt = t.scale(temp_sum, inv);
            out.temporal = t.val(lt).item();
            add_term(lt, cfg.beta);
        }
        if (cfg.gamma > 0) {
            Var lk = t.scale(task_sum, inv);
            out.task = t.val(lk).item();
            add_term(lk, cfg.gamma);
        }
    }

    out.total = total;
    return out;
}

TrainHistory train(const Cohort& cohort, const TrainConfig& cfg, ParamStore& ps) {
    cfg.validate();
    if (cfg.gamma > 0)
        for (const auto& p : cohort.patients)
            for (const auto& v : p.visits)
                if (!v.label)
                    throw std::runtime_error("train: gamma > 0 but visit \"" + v.id + "\" has no label");

    std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ull);
    NegativeSampler sampler(cohort.graph);
    AdamConfig adam{cfg.lr, 0.9, 0.999, 1e-8, cfg.clip_norm};

    const int n_visits = cohort.num_visits();
    const int n_patients = static_cast<int>(cohort.patients.size());
    const int steps_per_epoch = std::max(1, (n_visits + cfg.batch_visits - 1) / cfg.batch_visits);

    std::vector<int> visit_order(n_visits);
    std::iota(visit_order.begin(), visit_order.end(), 0);
    std::vector<int> patient_order(n_patients);
    std::iota(patient_order.begin(), patient_order.end(), 0);

    // visit index -> incident edges, for structural batch assembly
    std::vector<std::vector<int>> visit_edges(n_visits);
    for (size_t e = 0; e < cohort.graph.edges.size(); ++e)
        visit_edges[cohort.graph.edges[e].first].push_back(static_cast<int>(e));

    TrainHistory hist;
    size_t patient_cursor = 0;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(visit_order.begin(), visit_order.end(), rng);
        std::shuffle(patient_order.begin(), patient_order.end(), rng);

        double ep_total = 0, ep_struct = 0, ep_temp = 0, ep_task = 0;
        for (int s = 0; s < steps_per_epoch; ++s) {
            // structural batch: edges incident to a chunk of sampled visits
            std::vector<std::pair<int, int>> positives;
            std::vector<std::vector<int>> negatives;
            if (cfg.alpha > 0) {
                int begin = s * cfg.batch_visits;
                for (int t2 = 0; t2 < cfg.batch_visits; ++t2) {
                    int vi = visit_order[(begin + t2) % n_visits];
                    for (int e : visit_edges[vi]) {
                        positives.push_back(cohort.graph.edges[e]);
                        negatives.push_back(sampler.sample(rng, *cohort.graph.visits[vi], cfg.K));
                    }
                }
            }

            std::vector<const PatientSequence*> seqs;
            if (cfg.beta > 0 || cfg.gamma > 0) {
                for (int t2 = 0; t2 < cfg.batch_seqs; ++t2) {
                    seqs.push_back(&cohort.patients[patient_order[patient_cursor % n_patients]]);
                    ++patient_cursor;
                }
            }

            Tape tape;
            std::unordered_map<std::string, Var> leaves;
            LossBreakdown lb = unified_loss(tape, leaves, ps, cohort, cfg, positives, negatives, seqs, rng);
            tape.backward(lb.total);

            ps.zero_grad();
            for (auto& [name, var] : leaves) {
                Array& g = tape.grad(var);
                Array& dst = ps.at(name).grad;
                for (size_t i = 0; i < g.size(); ++i) dst.data[i] += g.data[i];
            }
            adam_step(ps, adam);

            ep_total += tape.val(lb.total).item();
            ep_struct += lb.structural;
            ep_temp += lb.temporal;
            ep_task += lb.task;
        }
        hist.total.push_back(ep_total / steps_per_epoch);
        hist.structural.push_back(ep_struct / steps_per_epoch);
        hist.temporal.push_back(ep_temp / steps_per_epoch);
        hist.task.push_back(ep_task / steps_per_epoch);
    }
    return hist;
}

std::vector<std::vector<double>> predict_visit_probs(const ParamStore& ps, const Cohort& cohort,
                                                     const TrainConfig& cfg) {
    if (!ps.has("head.w_s")) throw std::runtime_error("predict_visit_probs: model has no risk head");
    std::vector<std::vector<double>> out(cohort.num_visits());
    std::mt19937_64 rng(0);  // unused: marker noise forced off
    TrainConfig eval_cfg = cfg;
    eval_cfg.marker_noise = MarkerNoise::Off;

    Tape t;
    std::unordered_map<std::string, Var> leaves;
    auto& mps = const_cast<ParamStore&>(ps);
    EncoderVars enc = bind_encoder(t, mps, leaves);
    TemporalVars tp = bind_temporal(t, mps, cfg.cell, leaves);
    HeadVars head = bind_head(t, mps, leaves);

    for (const auto& p : cohort.patients) {
        SequenceForward fwd = run_sequence(t, enc, tp, p, eval_cfg, false, rng);
        for (size_t i = 0; i < p.visits.size(); ++i) {
            Var pr = predict(t, head, fwd.states[i].h);
            out[p.visits[i].index] = t.val(pr).data;
        }
    }
    return out;
}

std::vector<NodeEmbedding> all_embeddings(const ParamStore& ps, const Cohort& cohort) {
    std::vector<NodeEmbedding> out;
    Tape t;
    std::unordered_map<std::string, Var> leaves;
    EncoderVars enc = bind_encoder(t, const_cast<ParamStore&>(ps), leaves);
    for (const Visit* v : cohort.graph.visits) {
        GaussianVars g = encode(t, enc, v->attributes, NodeKind::Visit);
        out.push_back({v->id, NodeKind::Visit, {t.val(g.mu).data, t.val(g.sigma2).data}});
    }
    for (const CodeNode& c : cohort.graph.codes) {
        GaussianVars g = encode(t, enc, c.attributes, NodeKind::Code);
        out.push_back({c.id, NodeKind::Code, {t.val(g.mu).data, t.val(g.sigma2).data}});
    }
    return out;
}

void export_embeddings(const ParamStore& ps, const Cohort& cohort, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("export_embeddings: cannot open " + path);
    f.precision(17);
    for (const NodeEmbedding& n : all_embeddings(ps, cohort)) {
        f << n.id << '\t' << (n.kind == NodeKind::Visit ? "visit" : "code");
        for (double x : n.emb.mu) f << '\t' << x;
        for (double x : n.emb.sigma2) f << '\t' << x;
        f << '\n';
    }
    if (!f) throw std::runtime_error("export_embeddings: write failed for " + path);
}

void save_trained(const ParamStore& ps, const TrainConfig& cfg, const TrainHistory& hist,
                  const std::string& path) {
    Checkpoint ck;
    ck.config_json = cfg.to_json();
    ck.history["total"] = hist.total;
    ck.history["structural"] = hist.structural;
    ck.history["temporal"] = hist.temporal;
    ck.history["task"] = hist.task;
    for (const auto& [name, slot] : ps.slots) ck.arrays[name] = slot.value;
    save_checkpoint(ck, path);
}

LoadedModel load_trained(const std::string& path) {
    Checkpoint ck = load_checkpoint(path);
    LoadedModel m;
    m.config = TrainConfig::from_json(ck.config_json);
    for (auto& [name, arr] : ck.arrays) m.params.add(name, std::move(arr));
    auto take = [&](const char* k, std::vector<double>& dst) {
        auto it = ck.history.find(k);
        if (it != ck.history.end()) dst = it->second;
    };
    take("total", m.history.total);
    take("structural", m.history.structural);
    take("temporal", m.history.temporal);
    take("task", m.history.task);
    return m;
}

}  // namespace medgraph
