#include "medgraph/metrics.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <random>
#include <set>

namespace medgraph {

namespace {

std::vector<double> average_ranks(const std::vector<double>& v) {
    const size_t n = v.size();
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return v[a] < v[b]; });
    std::vector<double> ranks(n);
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
        double r = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
        for (size_t k = i; k <= j; ++k) ranks[order[k]] = r;
        i = j + 1;
    }
    return ranks;
}

}  // namespace

double auc(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size()) throw std::invalid_argument("auc: size mismatch");
    int n_pos = 0, n_neg = 0;
    for (int l : labels) (l ? n_pos : n_neg)++;
    if (n_pos == 0 || n_neg == 0)
        throw std::runtime_error("auc: degenerate labels (need at least one positive and one negative)");
    std::vector<double> ranks = average_ranks(scores);
    double rank_sum = 0.0;
    for (size_t i = 0; i < labels.size(); ++i)
        if (labels[i]) rank_sum += ranks[i];
    return (rank_sum - 0.5 * n_pos * (n_pos + 1.0)) / (static_cast<double>(n_pos) * n_neg);
}

double average_precision(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size()) throw std::invalid_argument("average_precision: size mismatch");
    int n_pos = 0;
    for (int l : labels) n_pos += l ? 1 : 0;
    if (n_pos == 0) throw std::runtime_error("average_precision: no positives");

    std::vector<int> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return scores[a] > scores[b]; });

    double ap = 0.0;
    int tp = 0;
    for (size_t k = 0; k < order.size(); ++k) {
        if (labels[order[k]]) {
            ++tp;
            double precision = static_cast<double>(tp) / static_cast<double>(k + 1);
            ap += precision / n_pos;  // recall step of 1/n_pos per hit
        }
    }
    return ap;
}

MetricReport risk_metrics(const std::string& task, const std::vector<double>& scores,
                          const std::vector<int>& labels) {
    MetricReport r;
    r.task = task;
    for (int l : labels) (l ? r.n_pos : r.n_neg)++;
    r.auc = auc(scores, labels);
    r.ap = average_precision(scores, labels);
    return r;
}

namespace {

struct F1Counts {
    int tp = 0, fp = 0, fn = 0;
};

std::pair<double, double> f1_scores(const std::vector<int>& truth, const std::vector<int>& pred,
                                    int n_classes) {
    std::vector<F1Counts> per_class(n_classes);
    int correct = 0;
    for (size_t i = 0; i < truth.size(); ++i) {
        if (truth[i] == pred[i]) {
            ++correct;
            per_class[truth[i]].tp++;
        } else {
            per_class[truth[i]].fn++;
            per_class[pred[i]].fp++;
        }
    }
    // single-label multi-class: micro-F1 equals accuracy
    double micro = truth.empty() ? 0.0 : static_cast<double>(correct) / truth.size();
    double macro = 0.0;
    for (const auto& c : per_class) {
        double denom = 2.0 * c.tp + c.fp + c.fn;
        macro += denom > 0 ? 2.0 * c.tp / denom : 0.0;
    }
    macro /= std::max(1, n_classes);
    return {micro, macro};
}

}  // namespace

ProbeReport logistic_probe(const std::vector<std::vector<double>>& features,
                           const std::vector<int>& classes, double train_fraction, uint64_t seed) {
    if (features.size() != classes.size() || features.empty())
        throw std::invalid_argument("logistic_probe: bad inputs");
    if (train_fraction <= 0.0 || train_fraction >= 1.0)
        throw std::invalid_argument("logistic_probe: train_fraction must be in (0,1)");

    int n_classes = *std::max_element(classes.begin(), classes.end()) + 1;
    if (std::set<int>(classes.begin(), classes.end()).size() < 2)
        throw std::runtime_error("logistic_probe: single-class input");

    const int n = static_cast<int>(features.size());
    const int d = static_cast<int>(features[0].size());
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    int n_train = std::max(1, std::min(n - 1, static_cast<int>(std::lround(train_fraction * n))));

    // W is n_classes x (d+1), last column the bias
    std::vector<double> w(static_cast<size_t>(n_classes) * (d + 1), 0.0);
    std::vector<double> m1(w.size(), 0.0), m2(w.size(), 0.0);
    std::vector<double> grad(w.size());
    std::vector<double> logits(n_classes), probs(n_classes);

    auto forward = [&](int row) {
        for (int k = 0; k < n_classes; ++k) {
            double z = w[static_cast<size_t>(k) * (d + 1) + d];
            const double* wk = &w[static_cast<size_t>(k) * (d + 1)];
            const std::vector<double>& x = features[row];
            for (int j = 0; j < d; ++j) z += wk[j] * x[j];
            logits[k] = z;
        }
        double mx = *std::max_element(logits.begin(), logits.end());
        double sum = 0.0;
        for (int k = 0; k < n_classes; ++k) {
            probs[k] = std::exp(logits[k] - mx);
            sum += probs[k];
        }
        for (int k = 0; k < n_classes; ++k) probs[k] /= sum;
    };

    const double lr = 0.1, b1 = 0.9, b2 = 0.999, eps = 1e-8;
    for (int iter = 1; iter <= 5000; ++iter) {
        std::fill(grad.begin(), grad.end(), 0.0);
        for (int i = 0; i < n_train; ++i) {
            int row = order[i];
            forward(row);
            for (int k = 0; k < n_classes; ++k) {
                double delta = (probs[k] - (classes[row] == k ? 1.0 : 0.0)) / n_train;
                double* gk = &grad[static_cast<size_t>(k) * (d + 1)];
                const std::vector<double>& x = features[row];
                for (int j = 0; j < d; ++j) gk[j] += delta * x[j];
                gk[d] += delta;
            }
        }
        double gnorm = std::sqrt(std::inner_product(grad.begin(), grad.end(), grad.begin(), 0.0));
        if (gnorm < 1e-5) break;
        double bc1 = 1.0 - std::pow(b1, iter), bc2 = 1.0 - std::pow(b2, iter);
        for (size_t j = 0; j < w.size(); ++j) {
            m1[j] = b1 * m1[j] + (1 - b1) * grad[j];
            m2[j] = b2 * m2[j] + (1 - b2) * grad[j] * grad[j];
            w[j] -= lr * (m1[j] / bc1) / (std::sqrt(m2[j] / bc2) + eps);
        }
    }

    std::vector<int> truth, pred;
    for (int i = n_train; i < n; ++i) {
        int row = order[i];
        forward(row);
        truth.push_back(classes[row]);
        pred.push_back(static_cast<int>(std::max_element(probs.begin(), probs.end()) - probs.begin()));
    }
    auto [micro, macro] = f1_scores(truth, pred, n_classes);
    return ProbeReport{train_fraction, micro, macro};
}

double node_variance(const std::vector<double>& sigma2) {
    std::vector<double> v = sigma2;
    size_t k = std::min<size_t>(10, v.size());
    std::partial_sort(v.begin(), v.begin() + k, v.end(), std::greater<double>());
    double s = std::accumulate(v.begin(), v.begin() + k, 0.0);
    return s / static_cast<double>(k);
}

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 2) return 0.0;
    std::vector<double> rx = average_ranks(x), ry = average_ranks(y);
    double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / rx.size();
    double my = std::accumulate(ry.begin(), ry.end(), 0.0) / ry.size();
    double sxy = 0, sxx = 0, syy = 0;
    for (size_t i = 0; i < rx.size(); ++i) {
        sxy += (rx[i] - mx) * (ry[i] - my);
        sxx += (rx[i] - mx) * (rx[i] - mx);
        syy += (ry[i] - my) * (ry[i] - my);
    }
    if (sxx <= 0 || syy <= 0) return 0.0;
    return sxy / std::sqrt(sxx * syy);
}

UncertaintyReport uncertainty_report(const Cohort& cohort, const std::vector<NodeEmbedding>& embs) {
    const int n_visits = cohort.num_visits();
    const int n_codes = cohort.num_codes();
    if (static_cast<int>(embs.size()) != n_visits + n_codes)
        throw std::invalid_argument("uncertainty_report: embedding count mismatch");

    UncertaintyReport rep;

    // per-patient mean visit variance, bucketed into 20 quantile groups by visit count
    struct PatientVar {
        int visit_count;
        double mean_var;
    };
    std::vector<PatientVar> pvars;
    int cursor = 0;
    for (const auto& p : cohort.patients) {
        double s = 0.0;
        for (size_t i = 0; i < p.visits.size(); ++i)
            s += node_variance(embs[cursor + static_cast<int>(i)].emb.sigma2);
        cursor += static_cast<int>(p.visits.size());
        pvars.push_back({static_cast<int>(p.visits.size()), s / p.visits.size()});
    }
    std::stable_sort(pvars.begin(), pvars.end(),
                     [](const PatientVar& a, const PatientVar& b) { return a.visit_count < b.visit_count; });
    const int n_vbuckets = 20;
    std::vector<double> bx, by;
    for (int b = 0; b < n_vbuckets; ++b) {
        size_t lo = b * pvars.size() / n_vbuckets;
        size_t hi = (b + 1) * pvars.size() / n_vbuckets;
        if (lo >= hi) continue;
        double cx = 0, cv = 0;
        for (size_t i = lo; i < hi; ++i) {
            cx += pvars[i].visit_count;
            cv += pvars[i].mean_var;
        }
        int cnt = static_cast<int>(hi - lo);
        rep.visit_buckets.push_back({cx / cnt, cv / cnt, cnt});
        bx.push_back(static_cast<double>(b));
        by.push_back(cv / cnt);
    }
    rep.spearman_visits = spearman(bx, by);

    // codes: 10 equal-width bins over log10(degree), degree-0 codes skipped
    double lo10 = 1e300, hi10 = -1e300;
    for (int c = 0; c < n_codes; ++c) {
        int deg = cohort.graph.code_degree[c];
        if (deg < 1) continue;
        double l = std::log10(static_cast<double>(deg));
        lo10 = std::min(lo10, l);
        hi10 = std::max(hi10, l);
    }
    const int n_cbuckets = 10;
    std::vector<double> csum(n_cbuckets, 0.0), cx(n_cbuckets, 0.0);
    std::vector<int> ccnt(n_cbuckets, 0);
    if (hi10 >= lo10) {
        double width = std::max(hi10 - lo10, 1e-12) / n_cbuckets;
        for (int c = 0; c < n_codes; ++c) {
            int deg = cohort.graph.code_degree[c];
            if (deg < 1) continue;
            double l = std::log10(static_cast<double>(deg));
            int b = std::min(n_cbuckets - 1, static_cast<int>((l - lo10) / width));
            csum[b] += node_variance(embs[n_visits + c].emb.sigma2);
            cx[b] += l;
            ccnt[b] += 1;
        }
    }
    bx.clear();
    by.clear();
    for (int b = 0; b < n_cbuckets; ++b) {
        if (ccnt[b] == 0) continue;
        rep.code_buckets.push_back({cx[b] / ccnt[b], csum[b] / ccnt[b], ccnt[b]});
        bx.push_back(static_cast<double>(b));
        by.push_back(csum[b] / ccnt[b]);
    }
    rep.spearman_codes = spearman(bx, by);
    return rep;
}

Pca2D pca_2d(const std::vector<std::vector<double>>& rows) {
    if (rows.size() < 3) throw std::invalid_argument("pca_2d: need at least 3 rows");
    const int n = static_cast<int>(rows.size());
    const int d = static_cast<int>(rows[0].size());

    std::vector<double> mean(d, 0.0);
    for (const auto& r : rows)
        for (int j = 0; j < d; ++j) mean[j] += r[j] / n;
    std::vector<std::vector<double>> x(n, std::vector<double>(d));
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) x[i][j] = rows[i][j] - mean[j];

    // covariance (d x d)
    std::vector<std::vector<double>> cov(d, std::vector<double>(d, 0.0));
    for (int i = 0; i < n; ++i)
        for (int a = 0; a < d; ++a) {
            double xa = x[i][a];
            if (xa == 0.0) continue;
            for (int b = 0; b < d; ++b) cov[a][b] += xa * x[i][b] / n;
        }

    Pca2D out;
    std::vector<std::vector<double>> components;
    for (int comp = 0; comp < 2; ++comp) {
        std::vector<double> v(d, 0.0);
        // deterministic start, roughly aligned with the dominant axis
        for (int j = 0; j < d; ++j) v[j] = 1.0 / std::sqrt(static_cast<double>(d)) + 1e-3 * (j % 7);
        double lambda = 0.0;
        for (int iter = 0; iter < 10000; ++iter) {
            std::vector<double> nv(d, 0.0);
            for (int a = 0; a < d; ++a)
                for (int b = 0; b < d; ++b) nv[a] += cov[a][b] * v[b];
            // orthogonalize against previous components
            for (const auto& prev : components) {
                double dp = std::inner_product(nv.begin(), nv.end(), prev.begin(), 0.0);
                for (int j = 0; j < d; ++j) nv[j] -= dp * prev[j];
            }
            double norm = std::sqrt(std::inner_product(nv.begin(), nv.end(), nv.begin(), 0.0));
            if (norm < 1e-14) {
                out.rank_deficient = true;
                std::fill(nv.begin(), nv.end(), 0.0);
                v = nv;
                lambda = 0.0;
                break;
            }
            for (double& z : nv) z /= norm;
            double diff = 0.0;
            for (int j = 0; j < d; ++j) diff = std::max(diff, std::abs(std::abs(nv[j]) - std::abs(v[j])));
            v = nv;
            lambda = norm;
            if (diff < 1e-9) break;
        }
        // sign convention: largest-magnitude loading positive
        int argmax = 0;
        for (int j = 1; j < d; ++j)
            if (std::abs(v[j]) > std::abs(v[argmax])) argmax = j;
        if (v[argmax] < 0)
            for (double& z : v) z = -z;
        out.eigenvalues[comp] = lambda;
        components.push_back(v);
    }

    out.points.resize(n);
    for (int i = 0; i < n; ++i)
        for (int comp = 0; comp < 2; ++comp)
            out.points[i][comp] =
                std::inner_product(x[i].begin(), x[i].end(), components[comp].begin(), 0.0);
    return out;
}

}  // namespace medgraph
