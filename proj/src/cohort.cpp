#include "medgraph/cohort.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

namespace medgraph {

using nlohmann::json;

namespace {

void check_finite_vector(const std::vector<double>& v, const std::string& what) {
    for (double x : v)
        if (!std::isfinite(x)) throw CohortError(what + ": non-finite attribute value");
}

}  // namespace

Cohort build_cohort(std::vector<PatientSequence> patients, std::vector<CodeNode> codes) {
    Cohort c;

    if (codes.empty()) throw CohortError("cohort: empty code list");
    c.dim_code = static_cast<int>(codes[0].attributes.size());
    if (c.dim_code < 1) throw CohortError("cohort: code attribute dimension must be >= 1");
    std::set<std::string> code_ids;
    for (size_t j = 0; j < codes.size(); ++j) {
        codes[j].index = static_cast<int>(j);
        if (!code_ids.insert(codes[j].id).second)
            throw CohortError("cohort: duplicate code id \"" + codes[j].id + "\"");
        if (static_cast<int>(codes[j].attributes.size()) != c.dim_code)
            throw CohortError("cohort: code \"" + codes[j].id + "\" attribute length " +
                              std::to_string(codes[j].attributes.size()) + " != D_c=" + std::to_string(c.dim_code));
        check_finite_vector(codes[j].attributes, "code \"" + codes[j].id + "\"");
    }

    // drop short sequences, validate the rest
    for (auto& p : patients) {
        if (p.visits.size() < 2) {
            c.warnings.push_back("dropped patient \"" + p.patient_id + "\" with " +
                                 std::to_string(p.visits.size()) + " visit(s)");
            continue;
        }
        for (size_t i = 1; i < p.visits.size(); ++i)
            if (p.visits[i].timestamp < p.visits[i - 1].timestamp)
                throw CohortError("patient \"" + p.patient_id + "\": non-monotone timestamps at visit \"" +
                                  p.visits[i].id + "\"");
        c.patients.push_back(std::move(p));
    }

    c.graph.codes = std::move(codes);
    c.graph.code_degree.assign(c.graph.codes.size(), 0);

    int visit_index = 0;
    std::set<std::string> visit_ids;
    for (auto& p : c.patients) {
        for (auto& v : p.visits) {
            v.index = visit_index++;
            if (!visit_ids.insert(v.id).second)
                throw CohortError("cohort: duplicate visit id \"" + v.id + "\"");
            if (v.timestamp < 0) throw CohortError("visit \"" + v.id + "\": negative timestamp");
            if (c.dim_visit == 0) {
                c.dim_visit = static_cast<int>(v.attributes.size());
                if (c.dim_visit < 1) throw CohortError("cohort: visit attribute dimension must be >= 1");
            }
            if (static_cast<int>(v.attributes.size()) != c.dim_visit)
                throw CohortError("visit \"" + v.id + "\" attribute length " +
                                  std::to_string(v.attributes.size()) + " != D_v=" + std::to_string(c.dim_visit));
            check_finite_vector(v.attributes, "visit \"" + v.id + "\"");
            if (v.codes.empty()) throw CohortError("visit \"" + v.id + "\" has no codes");
            std::sort(v.codes.begin(), v.codes.end());
            if (std::adjacent_find(v.codes.begin(), v.codes.end()) != v.codes.end())
                throw CohortError("visit \"" + v.id + "\" has duplicate code links");
            for (int j : v.codes)
                if (j < 0 || j >= static_cast<int>(c.graph.codes.size()))
                    throw CohortError("visit \"" + v.id + "\": code index out of range");
            if (v.label) {
                if (c.dim_label == 0) c.dim_label = static_cast<int>(v.label->size());
                if (static_cast<int>(v.label->size()) != c.dim_label)
                    throw CohortError("visit \"" + v.id + "\": label length mismatch");
                bool any = false;
                for (int b : *v.label) {
                    if (b != 0 && b != 1) throw CohortError("visit \"" + v.id + "\": label bits must be 0/1");
                    any = any || b == 1;
                }
                if (!any) throw CohortError("visit \"" + v.id + "\": label has no set bit");
            }
        }
    }

    for (const auto& p : c.patients)
        for (const auto& v : p.visits) {
            c.graph.visits.push_back(&v);
            for (int j : v.codes) {
                c.graph.edges.emplace_back(v.index, j);
                c.graph.code_degree[j] += 1;
            }
        }

    if (c.graph.edges.empty()) throw CohortError("cohort: no visit-code edges");
    return c;
}

namespace {

std::vector<double> parse_double_array(const json& j, const std::string& ctx) {
    if (!j.is_array()) throw CohortError(ctx + ": expected array");
    std::vector<double> out;
    out.reserve(j.size());
    for (const auto& x : j) {
        if (!x.is_number()) throw CohortError(ctx + ": expected numeric array");
        out.push_back(x.get<double>());
    }
    return out;
}

}  // namespace

Cohort load_cohort(const std::string& patients_path, const std::string& codes_path) {
    std::ifstream codes_in(codes_path);
    if (!codes_in) throw CohortError("cannot open " + codes_path);

    std::vector<CodeNode> codes;
    std::unordered_map<std::string, int> code_index;
    std::string line;
    int lineno = 0;
    while (std::getline(codes_in, line)) {
        ++lineno;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw CohortError(codes_path + ":" + std::to_string(lineno) + ": parse error: " + e.what());
        }
        CodeNode cn;
        cn.id = j.at("code_id").get<std::string>();
        cn.attributes = parse_double_array(j.at("x"), codes_path + ":" + std::to_string(lineno));
        if (j.contains("class")) cn.planted_class = j.at("class").get<std::string>();
        code_index.emplace(cn.id, static_cast<int>(codes.size()));
        codes.push_back(std::move(cn));
    }

    std::ifstream pat_in(patients_path);
    if (!pat_in) throw CohortError("cannot open " + patients_path);

    std::vector<PatientSequence> patients;
    lineno = 0;
    while (std::getline(pat_in, line)) {
        ++lineno;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw CohortError(patients_path + ":" + std::to_string(lineno) + ": parse error: " + e.what());
        }
        PatientSequence p;
        try {
            p.patient_id = j.at("patient_id").get<std::string>();
            for (const auto& jv : j.at("visits")) {
                Visit v;
                v.id = jv.at("visit_id").get<std::string>();
                v.timestamp = jv.at("t").get<double>();
                v.attributes = parse_double_array(jv.at("x"), "visit " + v.id);
                for (const auto& jc : jv.at("codes")) {
                    std::string cid = jc.get<std::string>();
                    auto it = code_index.find(cid);
                    if (it == code_index.end())
                        throw CohortError(patients_path + ":" + std::to_string(lineno) +
                                          ": visit \"" + v.id + "\" references unknown code \"" + cid + "\"");
                    v.codes.push_back(it->second);
                }
                if (jv.contains("y")) {
                    std::vector<int> y;
                    for (const auto& b : jv.at("y")) y.push_back(b.get<int>());
                    v.label = std::move(y);
                }
                p.visits.push_back(std::move(v));
            }
        } catch (const json::exception& e) {
            throw CohortError(patients_path + ":" + std::to_string(lineno) + ": schema error: " + e.what());
        }
        patients.push_back(std::move(p));
    }

    return build_cohort(std::move(patients), std::move(codes));
}

void save_cohort(const Cohort& c, const std::string& patients_path, const std::string& codes_path) {
    std::ofstream pat_out(patients_path);
    if (!pat_out) throw CohortError("cannot open " + patients_path + " for writing");
    for (const auto& p : c.patients) {
        json j;
        j["patient_id"] = p.patient_id;
        j["visits"] = json::array();
        for (const auto& v : p.visits) {
            json jv;
            jv["visit_id"] = v.id;
            jv["t"] = v.timestamp;
            jv["x"] = v.attributes;
            json jc = json::array();
            for (int code : v.codes) jc.push_back(c.graph.codes[code].id);
            jv["codes"] = std::move(jc);
            if (v.label) jv["y"] = *v.label;
            j["visits"].push_back(std::move(jv));
        }
        pat_out << j.dump() << "\n";
    }

    std::ofstream code_out(codes_path);
    if (!code_out) throw CohortError("cannot open " + codes_path + " for writing");
    for (const auto& cn : c.graph.codes) {
        json j;
        j["code_id"] = cn.id;
        j["x"] = cn.attributes;
        if (cn.planted_class) j["class"] = *cn.planted_class;
        code_out << j.dump() << "\n";
    }
}

StatsReport cohort_stats(const Cohort& c) {
    StatsReport r;
    r.patients = static_cast<int>(c.patients.size());
    r.visits = c.num_visits();
    r.codes = c.num_codes();
    r.edges = c.num_edges();
    for (const auto& p : c.patients) {
        int t = static_cast<int>(p.visits.size());
        r.max_visits_per_patient = std::max(r.max_visits_per_patient, t);
        for (const auto& v : p.visits)
            r.max_codes_per_visit = std::max(r.max_codes_per_visit, static_cast<int>(v.codes.size()));
    }
    if (r.patients > 0) r.avg_visits_per_patient = static_cast<double>(r.visits) / r.patients;
    if (r.visits > 0) r.avg_codes_per_visit = static_cast<double>(r.edges) / r.visits;
    return r;
}

std::vector<double> time_gaps(const PatientSequence& p) {
    if (p.visits.size() < 2) throw CohortError("time_gaps: sequence needs at least two visits");
    std::vector<double> gaps;
    gaps.reserve(p.visits.size() - 1);
    for (size_t i = 1; i < p.visits.size(); ++i) {
        double g = p.visits[i].timestamp - p.visits[i - 1].timestamp;
        if (g < 0)
            throw CohortError("time_gaps: negative gap before visit \"" + p.visits[i].id + "\"");
        gaps.push_back(g);
    }
    return gaps;
}

Cohort with_identity_code_attrs(const Cohort& c) {
    std::vector<PatientSequence> patients = c.patients;
    std::vector<CodeNode> codes = c.graph.codes;
    size_t n = codes.size();
    for (size_t j = 0; j < n; ++j) {
        codes[j].attributes.assign(n, 0.0);
        codes[j].attributes[j] = 1.0;
    }
    return build_cohort(std::move(patients), std::move(codes));
}

}  // namespace medgraph
