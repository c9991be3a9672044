#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <unistd.h>

#include <cmath>
#include <cstdio>
#include <fstream>

#include <json.hpp>

#include "medgraph/metrics.hpp"
#include "medgraph/synth.hpp"

using namespace medgraph;

namespace {

GenConfig quick_config() {
    GenConfig cfg;
    cfg.n_patients = 200;
    cfg.n_codes = 60;
    cfg.n_code_classes = 6;
    cfg.seed = 42;
    return cfg;
}

std::vector<double> flat_labels(const Cohort& c) {
    std::vector<double> out;
    for (const auto& p : c.patients)
        for (const auto& v : p.visits) out.push_back((*v.label)[1]);
    return out;
}

}  // namespace

TEST_CASE("generation is a pure function of the config") {
    GenConfig cfg = quick_config();
    Cohort a = generate(cfg);
    Cohort b = generate(cfg);
    REQUIRE(a.patients.size() == b.patients.size());
    for (size_t i = 0; i < a.patients.size(); ++i) {
        const auto& pa = a.patients[i];
        const auto& pb = b.patients[i];
        REQUIRE(pa.visits.size() == pb.visits.size());
        CHECK(pa.patient_id == pb.patient_id);
        for (size_t j = 0; j < pa.visits.size(); ++j) {
            CHECK(pa.visits[j].timestamp == pb.visits[j].timestamp);
            CHECK(pa.visits[j].attributes == pb.visits[j].attributes);
            CHECK(pa.visits[j].codes == pb.visits[j].codes);
            CHECK(pa.visits[j].label == pb.visits[j].label);
        }
    }
    REQUIRE(a.graph.codes.size() == b.graph.codes.size());
    for (size_t j = 0; j < a.graph.codes.size(); ++j)
        CHECK(a.graph.codes[j].attributes == b.graph.codes[j].attributes);

    // a different seed produces a different cohort
    cfg.seed = 43;
    Cohort d = generate(cfg);
    CHECK(a.patients[0].visits[0].timestamp != d.patients[0].visits[0].timestamp);
}

TEST_CASE("parallel generation matches single-threaded output") {
    GenConfig cfg = quick_config();
    Cohort a = generate(cfg);
    cfg.workers = 4;
    Cohort b = generate(cfg);
    REQUIRE(a.patients.size() == b.patients.size());
    for (size_t i = 0; i < a.patients.size(); ++i) {
        REQUIRE(a.patients[i].visits.size() == b.patients[i].visits.size());
        for (size_t j = 0; j < a.patients[i].visits.size(); ++j) {
            CHECK(a.patients[i].visits[j].timestamp == b.patients[i].visits[j].timestamp);
            CHECK(a.patients[i].visits[j].codes == b.patients[i].visits[j].codes);
        }
    }
}

TEST_CASE("degenerate codes-per-visit range is honored exactly") {
    GenConfig cfg = quick_config();
    cfg.codes_min = 5;
    cfg.codes_max = 5;
    Cohort c = generate(cfg);
    for (const auto& p : c.patients)
        for (const auto& v : p.visits) CHECK(v.codes.size() == 5);
}

TEST_CASE("visit counts respect the configured range") {
    GenConfig cfg = quick_config();
    cfg.visits_min = 3;
    cfg.visits_max = 7;
    Cohort c = generate(cfg);
    for (const auto& p : c.patients) {
        CHECK(p.visits.size() >= 3);
        CHECK(p.visits.size() <= 7);
    }
}

TEST_CASE("readmission prevalence is moderate and tracks severity") {
    GenConfig cfg = quick_config();
    cfg.n_patients = 1000;
    Cohort c = generate(cfg);

    std::vector<double> labels = flat_labels(c);
    double prevalence = 0.0;
    for (double y : labels) prevalence += y;
    prevalence /= static_cast<double>(labels.size());
    CHECK(prevalence > 0.2);
    CHECK(prevalence < 0.9);

    // point-biserial correlation between the (noisy) severity channel and the label
    std::vector<double> sev;
    for (const auto& p : c.patients)
        for (const auto& v : p.visits) sev.push_back(v.attributes[3]);
    double my = prevalence, mx = 0.0;
    for (double x : sev) mx += x;
    mx /= static_cast<double>(sev.size());
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (size_t i = 0; i < sev.size(); ++i) {
        sxy += (sev[i] - mx) * (labels[i] - my);
        sxx += (sev[i] - mx) * (sev[i] - mx);
        syy += (labels[i] - my) * (labels[i] - my);
    }
    double r = sxy / std::sqrt(sxx * syy);
    CHECK(r > 0.2);
}

TEST_CASE("planted classes are recoverable from raw code attributes") {
    GenConfig cfg = quick_config();
    cfg.n_codes = 120;
    Cohort c = generate(cfg);
    std::vector<std::vector<double>> feats;
    std::vector<int> classes;
    for (const CodeNode& cn : c.graph.codes) {
        feats.push_back(cn.attributes);
        REQUIRE(cn.planted_class.has_value());
        classes.push_back(std::stoi(cn.planted_class->substr(5)));
    }
    ProbeReport rep = logistic_probe(feats, classes, 0.6, 7);
    CHECK(rep.micro_f1 >= 0.95);
}

TEST_CASE("readmission label equals the 30-day gap rule exactly") {
    GenConfig cfg = quick_config();
    Cohort c = generate(cfg);
    for (const auto& p : c.patients) {
        std::vector<double> gaps = time_gaps(p);
        for (size_t i = 0; i < p.visits.size(); ++i) {
            int want = (i + 1 < p.visits.size() && gaps[i] < 30.0) ? 1 : 0;
            CHECK((*p.visits[i].label)[1] == want);
            CHECK((*p.visits[i].label)[0] == 1 - want);
        }
    }
}

TEST_CASE("mortality labels mark only final visits of severe patients") {
    GenConfig cfg = quick_config();
    cfg.task = "mortality";
    Cohort c = generate(cfg);
    int n_pos = 0;
    for (const auto& p : c.patients)
        for (size_t i = 0; i < p.visits.size(); ++i) {
            int y = (*p.visits[i].label)[1];
            if (i + 1 < p.visits.size()) CHECK(y == 0);
            n_pos += y;
        }
    // severity ~ U(0,1), threshold 0.8: roughly a fifth of patients
    CHECK(n_pos > 0);
    CHECK(n_pos < static_cast<int>(c.patients.size()) / 2);
}

TEST_CASE("realized visit counts land near the configured mean") {
    GenConfig cfg = quick_config();
    cfg.n_patients = 500;
    cfg.visits_min = 4;
    cfg.visits_max = 12;
    Cohort c = generate(cfg);
    StatsReport stats = cohort_stats(c);
    double configured_mean = 0.5 * (cfg.visits_min + cfg.visits_max);
    CHECK(stats.avg_visits_per_patient > 0.9 * configured_mean);
    CHECK(stats.avg_visits_per_patient < 1.1 * configured_mean);
    CHECK(stats.patients == 500);
}

TEST_CASE("code degrees are skewed across and within classes") {
    GenConfig cfg = quick_config();
    cfg.n_patients = 400;
    Cohort c = generate(cfg);
    // first-class codes should collectively outdraw last-class codes
    long first = 0, last = 0;
    for (const CodeNode& cn : c.graph.codes) {
        if (*cn.planted_class == "class0") first += c.graph.code_degree[cn.index];
        if (*cn.planted_class == "class" + std::to_string(cfg.n_code_classes - 1))
            last += c.graph.code_degree[cn.index];
    }
    CHECK(first > 2 * last);
}

TEST_CASE("config validation rejects inconsistent ranges") {
    GenConfig cfg = quick_config();
    cfg.n_code_classes = cfg.n_codes + 1;
    CHECK_THROWS_AS(generate(cfg), std::invalid_argument);
    cfg = quick_config();
    cfg.visits_min = 1;  // sequences need two visits
    CHECK_THROWS_AS(generate(cfg), std::invalid_argument);
    cfg = quick_config();
    cfg.codes_max = cfg.n_codes + 5;
    CHECK_THROWS_AS(generate(cfg), std::invalid_argument);
    cfg = quick_config();
    cfg.task = "unknown-task";
    CHECK_THROWS_AS(generate(cfg), std::invalid_argument);
}

TEST_CASE("manifest records the config and realized statistics") {
    GenConfig cfg = quick_config();
    Cohort c = generate(cfg);
    std::string path = "/tmp/medgraph_synth_manifest_" + std::to_string(::getpid()) + ".json";
    write_manifest(cfg, c, path);
    std::ifstream f(path);
    nlohmann::json j = nlohmann::json::parse(f);
    std::remove(path.c_str());
    CHECK(j["config"]["n_patients"] == cfg.n_patients);
    CHECK(j["config"]["seed"] == cfg.seed);
    CHECK(j["realized"]["patients"] == static_cast<int>(c.patients.size()));
    CHECK(j["realized"]["codes"] == c.num_codes());
    CHECK(j["realized"]["edges"] == c.num_edges());
    double prev = j["realized"]["label_prevalence"];
    CHECK(prev > 0.0);
    CHECK(prev < 1.0);
}
