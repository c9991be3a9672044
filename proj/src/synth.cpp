#include "medgraph/synth.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <thread>

#include <json.hpp>

namespace medgraph {

using nlohmann::json;

namespace {

uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e9b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

int weighted_pick(std::mt19937_64& rng, const std::vector<double>& cdf) {
    double u = std::uniform_real_distribution<double>(0.0, cdf.back())(rng);
    return static_cast<int>(std::lower_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
}

std::vector<double> to_cdf(const std::vector<double>& w) {
    std::vector<double> cdf(w.size());
    double acc = 0.0;
    for (size_t i = 0; i < w.size(); ++i) {
        acc += w[i];
        cdf[i] = acc;
    }
    return cdf;
}

}  // namespace

void GenConfig::validate() const {
    if (n_patients < 1 || n_codes < 1) throw std::invalid_argument("GenConfig: counts must be >= 1");
    if (n_code_classes < 1 || n_code_classes > n_codes)
        throw std::invalid_argument("GenConfig: need 1 <= n_code_classes <= n_codes");
    if (d_v < 4 || d_c < 1) throw std::invalid_argument("GenConfig: d_v >= 4 and d_c >= 1 required");
    if (visits_min < 2 || visits_min > visits_max)
        throw std::invalid_argument("GenConfig: need 2 <= visits_min <= visits_max");
    if (codes_min < 1 || codes_min > codes_max)
        throw std::invalid_argument("GenConfig: need 1 <= codes_min <= codes_max");
    if (codes_max > n_codes) throw std::invalid_argument("GenConfig: codes_max > n_codes");
    if (base_gap_rate <= 0 || attr_noise <= 0)
        throw std::invalid_argument("GenConfig: base_gap_rate and attr_noise must be positive");
    if (task != "readmit30" && task != "mortality")
        throw std::invalid_argument("GenConfig: unknown task " + task);
}

std::string GenConfig::to_json() const {
    json j;
    j["n_patients"] = n_patients;
    j["n_codes"] = n_codes;
    j["n_code_classes"] = n_code_classes;
    j["d_v"] = d_v;
    j["d_c"] = d_c;
    j["visits_min"] = visits_min;
    j["visits_max"] = visits_max;
    j["codes_min"] = codes_min;
    j["codes_max"] = codes_max;
    j["base_gap_rate"] = base_gap_rate;
    j["severity_drift"] = severity_drift;
    j["attr_noise"] = attr_noise;
    j["seed"] = seed;
    j["task"] = task;
    return j.dump();
}

namespace {

struct PlantedCodes {
    std::vector<CodeNode> codes;
    std::vector<int> code_class;            // class per code
    std::vector<std::vector<int>> members;  // codes per class
    std::vector<double> class_cdf;          // skewed class popularity
    std::vector<std::vector<double>> member_cdf;  // zipf within class
};

PlantedCodes make_codes(const GenConfig& cfg, uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);

    PlantedCodes pc;
    std::vector<std::vector<double>> prototypes(cfg.n_code_classes);
    for (auto& proto : prototypes) {
        proto.resize(cfg.d_c);
        for (double& x : proto) x = normal(rng);
        double n2 = std::sqrt(std::inner_product(proto.begin(), proto.end(), proto.begin(), 0.0));
        for (double& x : proto) x /= std::max(n2, 1e-12);
    }

    pc.members.resize(cfg.n_code_classes);
    for (int j = 0; j < cfg.n_codes; ++j) {
        int cls = j % cfg.n_code_classes;
        CodeNode cn;
        cn.id = "C" + std::to_string(j);
        cn.planted_class = "class" + std::to_string(cls);
        cn.attributes = prototypes[cls];
        for (double& x : cn.attributes) x += cfg.attr_noise * normal(rng);
        pc.code_class.push_back(cls);
        pc.members[cls].push_back(j);
        pc.codes.push_back(std::move(cn));
    }

    // class popularity ~ 1/(1+k), within-class code popularity zipf
    std::vector<double> cw(cfg.n_code_classes);
    for (int k = 0; k < cfg.n_code_classes; ++k) cw[k] = 1.0 / (1.0 + k);
    pc.class_cdf = to_cdf(cw);
    pc.member_cdf.resize(cfg.n_code_classes);
    for (int k = 0; k < cfg.n_code_classes; ++k) {
        std::vector<double> mw(pc.members[k].size());
        for (size_t r = 0; r < mw.size(); ++r) mw[r] = 1.0 / (1.0 + static_cast<double>(r));
        pc.member_cdf[k] = to_cdf(mw);
    }
    return pc;
}

PatientSequence make_patient(const GenConfig& cfg, const PlantedCodes& pc, int pidx, uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> unif(0.0, 1.0);

    PatientSequence p;
    p.patient_id = "P" + std::to_string(pidx);

    double severity = unif(rng);
    // per-patient rate noise keeps attributes from fully determining gaps
    double rate = cfg.base_gap_rate *
                  std::exp(cfg.severity_drift * 2.0 * (severity - 0.5) + 0.25 * normal(rng));

    // small preferred-class mixture, classes drawn by popularity
    std::vector<int> pref;
    while (pref.size() < std::min<size_t>(3, pc.members.size())) {
        int cls = weighted_pick(rng, pc.class_cdf);
        if (std::find(pref.begin(), pref.end(), cls) == pref.end()) pref.push_back(cls);
    }
    std::vector<double> pref_w(pref.size());
    for (auto& w : pref_w) w = 0.2 + unif(rng);
    std::vector<double> pref_cdf = to_cdf(pref_w);

    int span = cfg.visits_max - cfg.visits_min;
    int t_count = cfg.visits_min +
                  static_cast<int>(std::floor((0.6 * severity + 0.4 * unif(rng)) * (span + 1)));
    t_count = std::min(t_count, cfg.visits_max);

    double age = 0.3 + 0.5 * unif(rng);
    double sex = unif(rng) < 0.5 ? 0.0 : 1.0;

    double t = 30.0 * unif(rng);
    std::vector<double> gaps;
    for (int i = 0; i < t_count; ++i) {
        Visit v;
        v.id = p.patient_id + "_v" + std::to_string(i);
        v.timestamp = t;

        v.attributes.assign(cfg.d_v, 0.0);
        v.attributes[0] = 1.0;
        v.attributes[1] = age + 0.02 * normal(rng);
        v.attributes[2] = sex;
        v.attributes[3] = severity + 0.3 * normal(rng);  // noisy severity channel
        for (int d = 4; d < cfg.d_v; ++d) v.attributes[d] = 0.5 * normal(rng);

        int n_codes = cfg.codes_min +
                      static_cast<int>(std::floor(unif(rng) * (cfg.codes_max - cfg.codes_min + 1)));
        n_codes = std::min({n_codes, cfg.codes_max, cfg.n_codes});
        std::vector<int> chosen;
        int guard = 0;
        while (static_cast<int>(chosen.size()) < n_codes && guard++ < 200) {
            int cls = pref[weighted_pick(rng, pref_cdf)];
            int code = pc.members[cls][weighted_pick(rng, pc.member_cdf[cls])];
            if (std::find(chosen.begin(), chosen.end(), code) == chosen.end()) chosen.push_back(code);
        }
        v.codes = std::move(chosen);

        p.visits.push_back(std::move(v));
        if (i + 1 < t_count) {
            double gap = std::exponential_distribution<double>(rate)(rng);
            gaps.push_back(gap);
            t += gap;
        }
    }

    for (int i = 0; i < t_count; ++i) {
        int positive = 0;
        if (cfg.task == "readmit30") {
            positive = (i < t_count - 1 && gaps[i] < 30.0) ? 1 : 0;
        } else {  // mortality: death in the next admission, flagged on the final visit
            positive = (i == t_count - 1 && severity > 0.8) ? 1 : 0;
        }
        p.visits[i].label = std::vector<int>{1 - positive, positive};
    }
    return p;
}

}  // namespace

Cohort generate(const GenConfig& cfg) {
    cfg.validate();
    PlantedCodes pc = make_codes(cfg, splitmix64(cfg.seed));

    std::vector<PatientSequence> patients(cfg.n_patients);
    auto fill_range = [&](int begin, int end) {
        for (int i = begin; i < end; ++i)
            patients[i] = make_patient(cfg, pc, i, splitmix64(cfg.seed ^ (0x1000 + i)));
    };
    int workers = std::max(1, cfg.workers);
    if (workers == 1) {
        fill_range(0, cfg.n_patients);
    } else {
        std::vector<std::thread> threads;
        int chunk = (cfg.n_patients + workers - 1) / workers;
        for (int w = 0; w < workers; ++w) {
            int b = w * chunk, e = std::min(cfg.n_patients, b + chunk);
            if (b < e) threads.emplace_back(fill_range, b, e);
        }
        for (auto& th : threads) th.join();
    }

    return build_cohort(std::move(patients), std::move(pc.codes));
}

void write_manifest(const GenConfig& cfg, const Cohort& c, const std::string& path) {
    StatsReport stats = cohort_stats(c);
    int n_pos = 0, n_labeled = 0;
    for (const auto& p : c.patients)
        for (const auto& v : p.visits)
            if (v.label) {
                ++n_labeled;
                n_pos += (*v.label)[1];
            }
    json j;
    j["config"] = json::parse(cfg.to_json());
    j["realized"] = {{"patients", stats.patients},
                     {"visits", stats.visits},
                     {"codes", stats.codes},
                     {"edges", stats.edges},
                     {"avg_visits_per_patient", stats.avg_visits_per_patient},
                     {"max_visits_per_patient", stats.max_visits_per_patient},
                     {"avg_codes_per_visit", stats.avg_codes_per_visit},
                     {"max_codes_per_visit", stats.max_codes_per_visit},
                     {"label_prevalence", n_labeled ? static_cast<double>(n_pos) / n_labeled : 0.0}};
    std::ofstream f(path);
    if (!f) throw std::runtime_error("write_manifest: cannot open " + path);
    f << j.dump(2) << "\n";
}

}  // namespace medgraph
