#pragma once

#include <optional>
#include <string>
#include <vector>

#include "medgraph/array.hpp"

namespace medgraph {

struct CohortError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct CodeNode {
    std::string id;
    int index = -1;
    std::vector<double> attributes;          // length D_c
    std::optional<std::string> planted_class;  // used only by eval probes
};

struct Visit {
    std::string id;
    int index = -1;       // global visit index within the cohort
    double timestamp = 0.0;  // days since an arbitrary epoch
    std::vector<double> attributes;  // length D_v
    std::vector<int> codes;          // sorted unique code indices, nonempty
    std::optional<std::vector<int>> label;  // {0,1}^s
};

struct PatientSequence {
    std::string patient_id;
    std::vector<Visit> visits;  // T >= 2, timestamps nondecreasing
};

struct BipartiteGraph {
    std::vector<const Visit*> visits;  // concatenation of patient visits, index order
    std::vector<CodeNode> codes;
    std::vector<std::pair<int, int>> edges;  // (visit index, code index)
    std::vector<int> code_degree;            // visits linked per code
};

// Immutable after build_cohort. Move-only: the graph keeps pointers into
// the patient visit vectors.
struct Cohort {
    Cohort() = default;
    Cohort(const Cohort&) = delete;
    Cohort& operator=(const Cohort&) = delete;
    Cohort(Cohort&&) = default;
    Cohort& operator=(Cohort&&) = default;

    std::vector<PatientSequence> patients;
    BipartiteGraph graph;
    int dim_visit = 0;  // D_v
    int dim_code = 0;   // D_c
    int dim_label = 0;  // s, 0 when no labels anywhere
    std::vector<std::string> warnings;  // e.g. dropped single-visit patients

    int num_visits() const { return static_cast<int>(graph.visits.size()); }
    int num_codes() const { return static_cast<int>(graph.codes.size()); }
    int num_edges() const { return static_cast<int>(graph.edges.size()); }
};

struct StatsReport {
    int patients = 0;
    int visits = 0;
    int codes = 0;
    int edges = 0;
    double avg_visits_per_patient = 0.0;
    int max_visits_per_patient = 0;
    double avg_codes_per_visit = 0.0;
    int max_codes_per_visit = 0;
};

// Build the bipartite graph and validate the cohort invariants.
// Patients with fewer than two visits are dropped with a warning.
Cohort build_cohort(std::vector<PatientSequence> patients, std::vector<CodeNode> codes);

Cohort load_cohort(const std::string& patients_path, const std::string& codes_path);
void save_cohort(const Cohort& c, const std::string& patients_path, const std::string& codes_path);

StatsReport cohort_stats(const Cohort& c);

// gaps[i] = t_{i+1} - t_i, all nonnegative
std::vector<double> time_gaps(const PatientSequence& p);

// Attribute ablation: replace every code attribute vector with
// its one-hot identity row, so D_c becomes |C|.
Cohort with_identity_code_attrs(const Cohort& c);

}  // namespace medgraph
