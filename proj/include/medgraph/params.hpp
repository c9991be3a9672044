#pragma once

#include <bit>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "medgraph/array.hpp"

namespace medgraph {

// Named trainable arrays plus per-parameter Adam moment accumulators.
// std::map keeps iteration order deterministic.
struct ParamStore {
    struct Slot {
        Array value;
        Array grad;
        Array m1;  // first moment
        Array m2;  // second moment
    };

    std::map<std::string, Slot> slots;
    int64_t step_count = 0;

    Array& add(const std::string& name, Array init) {
        if (slots.count(name)) throw std::runtime_error("ParamStore: duplicate parameter " + name);
        Slot s;
        s.grad = Array(init.rows, init.cols);
        s.m1 = Array(init.rows, init.cols);
        s.m2 = Array(init.rows, init.cols);
        s.value = std::move(init);
        return slots.emplace(name, std::move(s)).first->second.value;
    }

    Slot& at(const std::string& name) {
        auto it = slots.find(name);
        if (it == slots.end()) throw std::runtime_error("ParamStore: unknown parameter " + name);
        return it->second;
    }
    const Slot& at(const std::string& name) const {
        auto it = slots.find(name);
        if (it == slots.end()) throw std::runtime_error("ParamStore: unknown parameter " + name);
        return it->second;
    }

    bool has(const std::string& name) const { return slots.count(name) != 0; }

    void zero_grad() {
        for (auto& [_, s] : slots) s.grad.fill(0.0);
    }

    size_t total_size() const {
        size_t n = 0;
        for (auto& [_, s] : slots) n += s.value.size();
        return n;
    }
};

struct AdamConfig {
    double lr = 0.001;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double clip_norm = 0.0;  // 0 disables global-norm clipping
};

// One adaptive-moment update over all parameters with populated gradients.
inline void adam_step(ParamStore& ps, const AdamConfig& cfg) {
    for (auto& [name, s] : ps.slots)
        if (!s.grad.all_finite())
            throw std::runtime_error("adam_step: non-finite gradient in parameter " + name);

    if (cfg.clip_norm > 0.0) {
        double sq = 0.0;
        for (auto& [_, s] : ps.slots)
            for (double g : s.grad.data) sq += g * g;
        double norm = std::sqrt(sq);
        if (norm > cfg.clip_norm) {
            double f = cfg.clip_norm / norm;
            for (auto& [_, s] : ps.slots)
                for (double& g : s.grad.data) g *= f;
        }
    }

    ps.step_count += 1;
    double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(ps.step_count));
    double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(ps.step_count));
    for (auto& [_, s] : ps.slots) {
        for (size_t i = 0; i < s.value.size(); ++i) {
            double g = s.grad.data[i];
            s.m1.data[i] = cfg.beta1 * s.m1.data[i] + (1.0 - cfg.beta1) * g;
            s.m2.data[i] = cfg.beta2 * s.m2.data[i] + (1.0 - cfg.beta2) * g * g;
            double mhat = s.m1.data[i] / bc1;
            double vhat = s.m2.data[i] / bc2;
            s.value.data[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
        }
    }
}

// ---- gradient checking ----

struct GradCheckEntry {
    std::string name;
    double max_rel_err = 0.0;
    bool nondifferentiable = false;  // one-sided derivatives disagree (kink)
    bool failed = false;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    double max_rel_err = 0.0;

    bool ok() const {
        for (const auto& e : entries)
            if (e.failed) return false;
        return true;
    }
};

// f(ps, with_grad): returns the scalar loss; when with_grad, also fills
// ps gradients (typically by running a tape and copying leaf grads back).
using ParamScalarFn = std::function<double(ParamStore&, bool with_grad)>;

inline GradCheckReport grad_check(const ParamScalarFn& f, ParamStore& ps, double step, double tol) {
    GradCheckReport report;
    ps.zero_grad();
    f(ps, true);  // analytic gradients

    std::map<std::string, Array> analytic;
    for (auto& [name, s] : ps.slots) analytic[name] = s.grad;

    for (auto& [name, s] : ps.slots) {
        GradCheckEntry entry;
        entry.name = name;
        for (size_t i = 0; i < s.value.size(); ++i) {
            double x0 = s.value.data[i];
            s.value.data[i] = x0 + step;
            double fp = f(ps, false);
            s.value.data[i] = x0 - step;
            double fm = f(ps, false);
            s.value.data[i] = x0;
            double f0 = f(ps, false);

            double central = (fp - fm) / (2.0 * step);
            double fwd = (fp - f0) / step;
            double bwd = (f0 - fm) / step;
            double scale = std::max({1.0, std::abs(fwd), std::abs(bwd)});
            if (std::abs(fwd - bwd) > 1e-2 * scale) {
                // left and right derivatives disagree: kink, not an error
                entry.nondifferentiable = true;
                continue;
            }
            double an = analytic[name].data[i];
            double rel = std::abs(an - central) / std::max({1.0, std::abs(an), std::abs(central)});
            entry.max_rel_err = std::max(entry.max_rel_err, rel);
        }
        entry.failed = entry.max_rel_err > tol;
        report.max_rel_err = std::max(report.max_rel_err, entry.max_rel_err);
        report.entries.push_back(std::move(entry));
    }
    return report;
}

// ---- checkpoint container ----
// Layout: "MGCK" | u32 version | u32 json length | json bytes | f32 payloads.
// The json holds the training config, history scalars and the array
// directory (name, rows, cols, byte offset into the payload region).

inline constexpr uint32_t kCheckpointVersion = 1;
static_assert(std::endian::native == std::endian::little, "checkpoint writer assumes little-endian host");

struct Checkpoint {
    uint32_t version = kCheckpointVersion;
    std::string config_json;                   // TrainConfig as JSON text
    std::map<std::string, std::vector<double>> history;  // per-epoch scalars
    std::map<std::string, Array> arrays;
};

void save_checkpoint(const Checkpoint& ck, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace medgraph
