#pragma once

#include <array>
#include <string>
#include <vector>

#include "medgraph/array.hpp"
#include "medgraph/cohort.hpp"
#include "medgraph/trainer.hpp"

namespace medgraph {

struct MetricReport {
    std::string task;
    double auc = 0.0;
    double ap = 0.0;
    int n_pos = 0;
    int n_neg = 0;
};

// Probability a random positive outranks a random negative, ties 0.5.
// Rank-sum evaluation with average ranks.
double auc(const std::vector<double>& scores, const std::vector<int>& labels);

// Precision-recall step sum over the score-sorted ranking, ties broken by index.
double average_precision(const std::vector<double>& scores, const std::vector<int>& labels);

MetricReport risk_metrics(const std::string& task, const std::vector<double>& scores,
                          const std::vector<int>& labels);

struct ProbeReport {
    double train_fraction = 0.0;
    double micro_f1 = 0.0;
    double macro_f1 = 0.0;
};

// Multinomial logistic regression on embedding rows, trained to convergence
// (grad norm < 1e-5 or 5000 iterations); F1 on the held-out remainder.
ProbeReport logistic_probe(const std::vector<std::vector<double>>& features,
                           const std::vector<int>& classes, double train_fraction, uint64_t seed);

struct UncertaintyBucket {
    double center = 0.0;  // bucket x-value (visit count / log10 degree)
    double mean_variance = 0.0;
    int count = 0;
};

struct UncertaintyReport {
    std::vector<UncertaintyBucket> visit_buckets;  // 20 quantile buckets by patient visit count
    std::vector<UncertaintyBucket> code_buckets;   // 10 equal-width bins by log10 degree
    double spearman_visits = 0.0;  // bucket index vs mean variance
    double spearman_codes = 0.0;
};

// node variance = mean of the 10 largest sigma^2 components
double node_variance(const std::vector<double>& sigma2);

UncertaintyReport uncertainty_report(const Cohort& cohort, const std::vector<NodeEmbedding>& embs);

// Mean-centered projection onto the top-2 principal directions (iterated
// power method, tol 1e-9); largest-magnitude loading made positive.
struct Pca2D {
    std::vector<std::array<double, 2>> points;
    std::array<double, 2> eigenvalues{0.0, 0.0};
    bool rank_deficient = false;
};
Pca2D pca_2d(const std::vector<std::vector<double>>& rows);

// Spearman rank correlation with average ranks; 0 when either side is constant.
double spearman(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace medgraph
