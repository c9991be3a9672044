#pragma once

#include <string>

#include "medgraph/cohort.hpp"

namespace medgraph {

// Seeded generator of cohorts with planted structure:
//   - codes partitioned into classes around prototype attribute vectors,
//     class and within-class popularity both skewed so code degrees spread;
//   - each patient has a latent severity and a small preferred-class mixture;
//   - inter-visit gaps are exponential with a severity-increasing rate, so
//     readmit30 labels (next gap < 30 days) are gap-determined;
//   - mortality labels mark the final visit of high-severity patients.
struct GenConfig {
    int n_patients = 500;
    int n_codes = 300;
    int n_code_classes = 10;
    int d_v = 8;
    int d_c = 16;
    int visits_min = 4;
    int visits_max = 12;
    int codes_min = 2;
    int codes_max = 6;
    double base_gap_rate = 1.0 / 35.0;  // events per day at mid severity
    double severity_drift = 1.0;        // rate multiplier spread with severity
    double attr_noise = 0.05;           // code attribute noise around prototypes
    uint64_t seed = 1;
    std::string task = "readmit30";  // which label goes into y: readmit30 | mortality
    int workers = 1;

    void validate() const;
    std::string to_json() const;
};

Cohort generate(const GenConfig& cfg);

// config + realized statistics, written next to the JSONL pair
void write_manifest(const GenConfig& cfg, const Cohort& c, const std::string& path);

}  // namespace medgraph
