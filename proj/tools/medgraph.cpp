// medgraph: generate | train | eval | export | report | stats
// exit 0 success, 1 validation/usage error, 2 runtime error

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "medgraph/cohort.hpp"
#include "medgraph/metrics.hpp"
#include "medgraph/synth.hpp"
#include "medgraph/trainer.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace medgraph;

namespace {

// thrown for bad input the user can correct; maps to exit 1
struct ValidationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::string slurp(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ValidationError("cannot open " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

uint64_t env_seed(uint64_t fallback) {
    const char* s = std::getenv("MEDGRAPH_SEED");
    if (!s || !*s) return fallback;
    try {
        return std::stoull(s);
    } catch (const std::exception&) {
        throw ValidationError("MEDGRAPH_SEED is not an unsigned integer");
    }
}

Cohort load_data(const std::string& dir, bool identity_attrs) {
    Cohort c = load_cohort(dir + "/patients.jsonl", dir + "/codes.jsonl");
    if (identity_attrs) c = with_identity_code_attrs(c);
    return c;
}

// scores and labels for class 1 on non-final visits, the prediction target
void risk_pairs(const Cohort& c, const std::vector<std::vector<double>>& probs,
                std::vector<double>& scores, std::vector<int>& labels) {
    if (c.dim_label < 2) throw ValidationError("cohort carries no labels");
    for (const PatientSequence& p : c.patients)
        for (size_t i = 0; i + 1 < p.visits.size(); ++i) {
            if (!p.visits[i].label) continue;
            scores.push_back(probs[p.visits[i].index][1]);
            labels.push_back((*p.visits[i].label)[1]);
        }
    if (scores.empty()) throw ValidationError("no labeled non-final visits");
}

void write_file(const std::string& path, const std::string& text) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write " + path);
    f << text;
}

json history_json(const TrainHistory& h) {
    return json{{"total", h.total},
                {"structural", h.structural},
                {"temporal", h.temporal},
                {"task", h.task}};
}

struct CliState {
    // generate
    GenConfig gen;
    // train
    TrainConfig train_cfg;
    bool no_structure = false, no_temporal = false, no_code_attrs = false;
    // shared
    std::string data_dir, out_path, ckpt_path, config_path;
    bool as_json = false;
    std::vector<double> fractions{0.1, 0.3, 0.5, 0.7, 0.9};
};

void cmd_generate(CliState& st) {
    st.gen.validate();
    fs::create_directories(st.out_path);
    Cohort c = generate(st.gen);
    save_cohort(c, st.out_path + "/patients.jsonl", st.out_path + "/codes.jsonl");
    write_manifest(st.gen, c, st.out_path + "/manifest.json");
    if (st.as_json)
        std::fputs((slurp(st.out_path + "/manifest.json")).c_str(), stdout);
    else {
        StatsReport s = cohort_stats(c);
        std::printf("wrote %s: %d patients, %d visits, %d codes, %d edges\n",
                    st.out_path.c_str(), s.patients, s.visits, s.codes, s.edges);
    }
}

void cmd_train(CliState& st) {
    TrainConfig cfg = st.train_cfg;
    if (st.no_structure) cfg.alpha = 0.0;
    if (st.no_temporal) {
        cfg.beta = 0.0;
        cfg.constant_gaps = true;
    }
    try {
        cfg.validate();
    } catch (const std::exception& e) {
        throw ValidationError(e.what());
    }
    Cohort c = load_data(st.data_dir, st.no_code_attrs);
    ParamStore ps = init_params(c, cfg);
    TrainHistory hist = train(c, cfg, ps);
    save_trained(ps, cfg, hist, st.out_path);
    json j{{"checkpoint", st.out_path},
           {"config", json::parse(cfg.to_json())},
           {"history", history_json(hist)}};
    if (st.as_json)
        std::printf("%s\n", j.dump().c_str());
    else if (!hist.total.empty())
        std::printf("wrote %s: %d epochs, loss %.6f -> %.6f\n", st.out_path.c_str(), cfg.epochs,
                    hist.total.front(), hist.total.back());
    else
        std::printf("wrote %s: 0 epochs\n", st.out_path.c_str());
}

void cmd_eval(CliState& st) {
    LoadedModel m = load_trained(st.ckpt_path);
    if (m.config.gamma <= 0) throw ValidationError("checkpoint has no risk head (gamma was 0)");
    Cohort c = load_data(st.data_dir, st.no_code_attrs);
    auto probs = predict_visit_probs(m.params, c, m.config);
    std::vector<double> scores;
    std::vector<int> labels;
    risk_pairs(c, probs, scores, labels);
    MetricReport r = risk_metrics(m.config.task, scores, labels);
    json j{{"task", r.task}, {"auc", r.auc}, {"ap", r.ap}, {"n_pos", r.n_pos}, {"n_neg", r.n_neg}};
    std::printf("%s\n", j.dump().c_str());
}

void cmd_export(CliState& st) {
    LoadedModel m = load_trained(st.ckpt_path);
    Cohort c = load_data(st.data_dir, st.no_code_attrs);
    export_embeddings(m.params, c, st.out_path);
    if (!st.as_json)
        std::printf("wrote %s: %d rows\n", st.out_path.c_str(), c.num_visits() + c.num_codes());
    else
        std::printf("%s\n", json{{"path", st.out_path}, {"rows", c.num_visits() + c.num_codes()}}.dump().c_str());
}

void cmd_report(CliState& st) {
    LoadedModel m = load_trained(st.ckpt_path);
    Cohort c = load_data(st.data_dir, st.no_code_attrs);
    fs::create_directories(st.out_path);
    auto embs = all_embeddings(m.params, c);
    json j;
    char line[256];

    if (m.config.gamma > 0 && c.dim_label >= 2) {
        auto probs = predict_visit_probs(m.params, c, m.config);
        std::vector<double> scores;
        std::vector<int> labels;
        risk_pairs(c, probs, scores, labels);
        MetricReport r = risk_metrics(m.config.task, scores, labels);
        j["risk"] = {{"task", r.task}, {"auc", r.auc}, {"ap", r.ap}, {"n_pos", r.n_pos}, {"n_neg", r.n_neg}};
        std::snprintf(line, sizeof(line), "task,auc,ap,n_pos,n_neg\n%s,%.6f,%.6f,%d,%d\n",
                      r.task.c_str(), r.auc, r.ap, r.n_pos, r.n_neg);
        write_file(st.out_path + "/risk_auc.csv", line);
    }

    // class probe on code means, when the data carries class annotations
    std::vector<std::vector<double>> feats;
    std::vector<int> classes;
    for (const CodeNode& code : c.graph.codes) {
        if (!code.planted_class) continue;
        feats.push_back(embs[c.num_visits() + code.index].emb.mu);
        classes.push_back(std::stoi(code.planted_class->substr(
            code.planted_class->find_first_of("0123456789"))));
    }
    if (!feats.empty()) {
        std::string csv = "train_fraction,micro_f1,macro_f1\n";
        j["probe"] = json::array();
        for (double f : st.fractions) {
            ProbeReport p = logistic_probe(feats, classes, f, m.config.seed);
            j["probe"].push_back({{"train_fraction", p.train_fraction},
                                  {"micro_f1", p.micro_f1},
                                  {"macro_f1", p.macro_f1}});
            std::snprintf(line, sizeof(line), "%.2f,%.6f,%.6f\n", p.train_fraction, p.micro_f1,
                          p.macro_f1);
            csv += line;
        }
        write_file(st.out_path + "/probe_f1.csv", csv);
    }

    UncertaintyReport u = uncertainty_report(c, embs);
    j["uncertainty"] = {{"spearman_visits", u.spearman_visits}, {"spearman_codes", u.spearman_codes}};
    auto bucket_csv = [&](const std::vector<UncertaintyBucket>& b, const char* x) {
        std::string csv = std::string(x) + ",mean_variance,count\n";
        for (const UncertaintyBucket& k : b) {
            std::snprintf(line, sizeof(line), "%.6f,%.6f,%d\n", k.center, k.mean_variance, k.count);
            csv += line;
        }
        return csv;
    };
    write_file(st.out_path + "/uncertainty_visits.csv", bucket_csv(u.visit_buckets, "visit_count"));
    write_file(st.out_path + "/uncertainty_codes.csv", bucket_csv(u.code_buckets, "log10_degree"));

    if (!feats.empty()) {
        Pca2D pca = pca_2d(feats);
        std::string csv = "x,y,class\n";
        for (size_t i = 0; i < pca.points.size(); ++i) {
            std::snprintf(line, sizeof(line), "%.6f,%.6f,%d\n", pca.points[i][0], pca.points[i][1],
                          classes[i]);
            csv += line;
        }
        write_file(st.out_path + "/projection_codes.csv", csv);
        j["projection"] = {{"eigenvalues", {pca.eigenvalues[0], pca.eigenvalues[1]}},
                           {"rank_deficient", pca.rank_deficient}};
    }

    write_file(st.out_path + "/report.json", j.dump(2) + "\n");
    if (st.as_json)
        std::printf("%s\n", j.dump().c_str());
    else
        std::printf("wrote %s\n", (st.out_path + "/report.json").c_str());
}

void cmd_stats(CliState& st) {
    Cohort c = load_data(st.data_dir, false);
    StatsReport s = cohort_stats(c);
    json j{{"patients", s.patients},
           {"visits", s.visits},
           {"codes", s.codes},
           {"edges", s.edges},
           {"avg_visits_per_patient", s.avg_visits_per_patient},
           {"max_visits_per_patient", s.max_visits_per_patient},
           {"avg_codes_per_visit", s.avg_codes_per_visit},
           {"max_codes_per_visit", s.max_codes_per_visit},
           {"warnings", c.warnings}};
    if (st.as_json)
        std::printf("%s\n", j.dump().c_str());
    else
        std::printf("patients %d  visits %d  codes %d  edges %d\n"
                    "visits/patient avg %.2f max %d  codes/visit avg %.2f max %d\n",
                    s.patients, s.visits, s.codes, s.edges, s.avg_visits_per_patient,
                    s.max_visits_per_patient, s.avg_codes_per_visit, s.max_codes_per_visit);
}

}  // namespace

int medgraph_cli(int argc, const char* const* argv, std::string* help_out = nullptr) {
    CLI::App app{"Gaussian visit/code embeddings from bipartite structure and event timing"};
    app.require_subcommand(help_out ? 0 : 1);
    app.set_help_all_flag("--help-all", "Full help for every subcommand");
    CliState st;

    auto* gen = app.add_subcommand("generate", "Write a synthetic cohort (patients.jsonl, codes.jsonl, manifest.json)");
    gen->add_option("--patients", st.gen.n_patients, "Number of patients");
    gen->add_option("--codes", st.gen.n_codes, "Number of codes");
    gen->add_option("--classes", st.gen.n_code_classes, "Number of code classes");
    gen->add_option("--visit-dim", st.gen.d_v, "Visit attribute width");
    gen->add_option("--code-dim", st.gen.d_c, "Code attribute width");
    gen->add_option("--visits-min", st.gen.visits_min, "Min visits per patient");
    gen->add_option("--visits-max", st.gen.visits_max, "Max visits per patient");
    gen->add_option("--codes-min", st.gen.codes_min, "Min codes per visit");
    gen->add_option("--codes-max", st.gen.codes_max, "Max codes per visit");
    gen->add_option("--gap-rate", st.gen.base_gap_rate, "Base inter-visit event rate per day");
    gen->add_option("--severity-drift", st.gen.severity_drift, "Rate spread with patient severity");
    gen->add_option("--attr-noise", st.gen.attr_noise, "Code attribute noise around class prototypes");
    gen->add_option("--task", st.gen.task, "Label to store: readmit30 | mortality");
    gen->add_option("--workers", st.gen.workers, "Parallel generation workers");
    gen->add_option("--seed", st.gen.seed, "RNG seed (fallback: MEDGRAPH_SEED)");
    gen->add_option("--config", st.config_path, "JSON file with generator fields, flags override");
    gen->add_option("--out", st.out_path, "Output directory")->required();
    gen->add_flag("--json", st.as_json, "Machine-readable output");

    auto* tr = app.add_subcommand("train", "Fit embeddings and write a checkpoint");
    tr->add_option("--data", st.data_dir, "Cohort directory")->required();
    tr->add_option("--out", st.out_path, "Checkpoint path")->required();
    tr->add_option("--task", st.train_cfg.task, "Supervised task label: readmit30 | mortality | none");
    tr->add_option("--alpha", st.train_cfg.alpha, "Structural loss weight");
    tr->add_option("--beta", st.train_cfg.beta, "Temporal loss weight");
    tr->add_option("--gamma", st.train_cfg.gamma, "Task loss weight");
    tr->add_option("--dim", st.train_cfg.L, "Embedding width");
    tr->add_option("--hidden", st.train_cfg.m, "Encoder intermediate width");
    tr->add_option("--recurrent", st.train_cfg.m_prime, "Recurrent hidden width");
    tr->add_option("--negatives", st.train_cfg.K, "Negative edges per positive");
    tr->add_option("--lr", st.train_cfg.lr, "Adam learning rate");
    tr->add_option("--batch-visits", st.train_cfg.batch_visits, "Structural minibatch size");
    tr->add_option("--batch-seqs", st.train_cfg.batch_seqs, "Sequence minibatch size");
    tr->add_option("--epochs", st.train_cfg.epochs, "Training epochs");
    tr->add_option("--seed", st.train_cfg.seed, "RNG seed (fallback: MEDGRAPH_SEED)");
    tr->add_option("--cell", [&st](const std::vector<std::string>& v) {
          st.train_cfg.cell = v[0] == "plain" ? CellKind::Plain : CellKind::Gated;
          return v[0] == "plain" || v[0] == "gated";
      }, "Recurrent cell: plain | gated");
    tr->add_option("--marker-noise", [&st](const std::vector<std::string>& v) {
          if (v[0] == "variance") st.train_cfg.marker_noise = MarkerNoise::Variance;
          else if (v[0] == "stddev") st.train_cfg.marker_noise = MarkerNoise::Stddev;
          else if (v[0] == "off") st.train_cfg.marker_noise = MarkerNoise::Off;
          else return false;
          return true;
      }, "Event marker noise scale: variance | stddev | off");
    tr->add_option("--task-mode", [&st](const std::vector<std::string>& v) {
          if (v[0] == "softmax-ce") st.train_cfg.task_mode = TaskLossMode::SoftmaxCE;
          else if (v[0] == "per-class-bce") st.train_cfg.task_mode = TaskLossMode::PerClassBCE;
          else return false;
          return true;
      }, "Task loss: softmax-ce | per-class-bce");
    tr->add_option("--clip-norm", st.train_cfg.clip_norm, "Gradient norm clip, 0 disables");
    tr->add_flag("--no-structure", st.no_structure, "Ablation: drop the structural term (alpha = 0)");
    tr->add_flag("--no-temporal", st.no_temporal,
                 "Ablation: drop the temporal term and space visits equally");
    tr->add_flag("--no-code-attrs", st.no_code_attrs,
                 "Ablation: replace code attributes with one-hot identities");
    tr->add_option("--config", st.config_path, "JSON file with training fields, flags override");
    tr->add_flag("--json", st.as_json, "Machine-readable output");

    auto* ev = app.add_subcommand("eval", "Score a checkpoint on a cohort; prints JSON metrics");
    ev->add_option("--ckpt", st.ckpt_path, "Checkpoint path")->required();
    ev->add_option("--data", st.data_dir, "Cohort directory")->required();
    ev->add_option("--task", st.train_cfg.task, "Task name override for the report");
    ev->add_flag("--no-code-attrs", st.no_code_attrs, "Match a checkpoint trained with one-hot code attributes");
    ev->add_flag("--json", st.as_json, "Machine-readable output (eval always prints JSON)");

    auto* ex = app.add_subcommand("export", "Write all node embeddings as TSV");
    ex->add_option("--ckpt", st.ckpt_path, "Checkpoint path")->required();
    ex->add_option("--data", st.data_dir, "Cohort directory")->required();
    ex->add_option("--out", st.out_path, "TSV output path")->required();
    ex->add_flag("--no-code-attrs", st.no_code_attrs, "Match a checkpoint trained with one-hot code attributes");
    ex->add_flag("--json", st.as_json, "Machine-readable output");

    auto* rp = app.add_subcommand("report", "Write JSON report and plot-ready CSVs");
    rp->add_option("--ckpt", st.ckpt_path, "Checkpoint path")->required();
    rp->add_option("--data", st.data_dir, "Cohort directory")->required();
    rp->add_option("--out", st.out_path, "Output directory")->required();
    rp->add_option("--fractions", st.fractions, "Probe train fractions");
    rp->add_flag("--no-code-attrs", st.no_code_attrs, "Match a checkpoint trained with one-hot code attributes");
    rp->add_flag("--json", st.as_json, "Machine-readable output");

    auto* stc = app.add_subcommand("stats", "Summarize a cohort directory");
    stc->add_option("--data", st.data_dir, "Cohort directory")->required();
    stc->add_flag("--json", st.as_json, "Machine-readable output");

    if (help_out) {
        *help_out = app.help("", CLI::AppFormatMode::All);
        return 0;
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    }

    try {
        // config file first, explicit flags override it
        if (gen->parsed() && !st.config_path.empty()) {
            json j = json::parse(slurp(st.config_path));
            GenConfig base = st.gen;
            base.n_patients = j.value("n_patients", base.n_patients);
            base.n_codes = j.value("n_codes", base.n_codes);
            base.n_code_classes = j.value("n_code_classes", base.n_code_classes);
            base.d_v = j.value("d_v", base.d_v);
            base.d_c = j.value("d_c", base.d_c);
            base.visits_min = j.value("visits_min", base.visits_min);
            base.visits_max = j.value("visits_max", base.visits_max);
            base.codes_min = j.value("codes_min", base.codes_min);
            base.codes_max = j.value("codes_max", base.codes_max);
            base.base_gap_rate = j.value("base_gap_rate", base.base_gap_rate);
            base.severity_drift = j.value("severity_drift", base.severity_drift);
            base.attr_noise = j.value("attr_noise", base.attr_noise);
            base.seed = j.value("seed", base.seed);
            base.task = j.value("task", base.task);
            // re-apply flag values on top of the file
            GenConfig flags = st.gen;
            st.gen = base;
            auto keep = [&](const char* flag, auto GenConfig::* field) {
                if (gen->count(flag)) st.gen.*field = flags.*field;
            };
            keep("--patients", &GenConfig::n_patients);
            keep("--codes", &GenConfig::n_codes);
            keep("--classes", &GenConfig::n_code_classes);
            keep("--visit-dim", &GenConfig::d_v);
            keep("--code-dim", &GenConfig::d_c);
            keep("--visits-min", &GenConfig::visits_min);
            keep("--visits-max", &GenConfig::visits_max);
            keep("--codes-min", &GenConfig::codes_min);
            keep("--codes-max", &GenConfig::codes_max);
            keep("--gap-rate", &GenConfig::base_gap_rate);
            keep("--severity-drift", &GenConfig::severity_drift);
            keep("--attr-noise", &GenConfig::attr_noise);
            keep("--seed", &GenConfig::seed);
            if (gen->count("--task")) st.gen.task = flags.task;
            if (gen->count("--workers")) st.gen.workers = flags.workers;
        }
        if (tr->parsed() && !st.config_path.empty()) {
            TrainConfig base = TrainConfig::from_json(slurp(st.config_path));
            TrainConfig flags = st.train_cfg;
            st.train_cfg = base;
            auto keep = [&](const char* flag, auto TrainConfig::* field) {
                if (tr->count(flag)) st.train_cfg.*field = flags.*field;
            };
            keep("--alpha", &TrainConfig::alpha);
            keep("--beta", &TrainConfig::beta);
            keep("--gamma", &TrainConfig::gamma);
            keep("--dim", &TrainConfig::L);
            keep("--hidden", &TrainConfig::m);
            keep("--recurrent", &TrainConfig::m_prime);
            keep("--negatives", &TrainConfig::K);
            keep("--lr", &TrainConfig::lr);
            keep("--batch-visits", &TrainConfig::batch_visits);
            keep("--batch-seqs", &TrainConfig::batch_seqs);
            keep("--epochs", &TrainConfig::epochs);
            keep("--seed", &TrainConfig::seed);
            keep("--clip-norm", &TrainConfig::clip_norm);
            if (tr->count("--task")) st.train_cfg.task = flags.task;
            if (tr->count("--cell")) st.train_cfg.cell = flags.cell;
            if (tr->count("--marker-noise")) st.train_cfg.marker_noise = flags.marker_noise;
            if (tr->count("--task-mode")) st.train_cfg.task_mode = flags.task_mode;
        }
        if (gen->parsed() && !gen->count("--seed")) st.gen.seed = env_seed(st.gen.seed);
        if (tr->parsed() && !tr->count("--seed")) st.train_cfg.seed = env_seed(st.train_cfg.seed);

        if (gen->parsed()) cmd_generate(st);
        else if (tr->parsed()) cmd_train(st);
        else if (ev->parsed()) cmd_eval(st);
        else if (ex->parsed()) cmd_export(st);
        else if (rp->parsed()) cmd_report(st);
        else if (stc->parsed()) cmd_stats(st);
    } catch (const ValidationError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 0;
}

#ifndef MEDGRAPH_CLI_NO_MAIN
int main(int argc, char** argv) { return medgraph_cli(argc, argv); }
#endif
