#pragma once

#include <utility>
#include <vector>

#include "blindcluster/cluster.hpp"
#include "blindcluster/nets.hpp"
#include "blindcluster/tensor.hpp"

namespace blindcluster {

struct ContingencyTable {
    int n_pred = 0;
    int n_true = 0;
    std::vector<long long> counts;  // n_pred x n_true, row-major

    static ContingencyTable from(const Labeling& pred, const Labeling& truth);
    long long at(int p, int t) const { return counts[static_cast<std::size_t>(p) * n_true + t]; }
    long long total() const;
};

// Mutual information over the arithmetic mean of the entropies, natural log.
double nmi(const Labeling& a, const Labeling& b);
double ari(const Labeling& a, const Labeling& b);
// Micro-averaged F1 (= accuracy) under the optimal one-to-one
// cluster-to-label assignment.
double f1_assignment(const Labeling& pred, const Labeling& truth);
// Mann-Whitney rank statistic with average ranks for ties.
double auroc(const std::vector<double>& scores, const std::vector<int>& labels);
// Per-region overlap (8-connectivity), integrated over a pooled descending
// threshold sweep up to fpr_max and normalized by it.
double pro(const std::vector<AnomalyMap>& score_maps, const std::vector<FeatureMap>& gt_masks,
           double fpr_max = 0.3, int n_thresholds = 200);
// (n_clusters, purity) per requested count, clustering with Ward.
std::vector<std::pair<int, double>> purity_curve(const std::vector<std::vector<double>>& points,
                                                 const Labeling& truth,
                                                 const std::vector<int>& cluster_counts);

// Exact linear assignment (min cost, square matrix); returns row -> column.
std::vector<int> solve_assignment(const std::vector<std::vector<double>>& cost);

struct LabelGrid {
    int height = 0;
    int width = 0;
    std::vector<int> labels;
    int n_clusters = 0;
};

// Pixel-level clustering of an unseen image: embed each (post-crop) pixel
// through the trained head and assign the nearest cluster center.
LabelGrid segment_pixels(const FeatureMap& new_features, const PixelNet& head,
                         const std::vector<std::vector<double>>& centers,
                         double feature_smooth_sigma, int crop_margin);

}  // namespace blindcluster
