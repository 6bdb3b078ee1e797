#pragma once

#include <string>
#include <vector>

#include "blindcluster/rng.hpp"

namespace blindcluster {

struct Labeling {
    std::vector<int> labels;  // 0-based cluster index per item
    int n_clusters = 0;
};

// Agglomerative clustering with Ward linkage (Lance-Williams recurrence);
// merge ties broken by the smallest (i, j) slot pair.
Labeling ward_cluster(const std::vector<std::vector<double>>& points, int n_clusters);

struct KmeansResult {
    Labeling labeling;
    std::vector<std::vector<double>> centers;
    double wcss = 0.0;
};

// k-means++ seeding, Lloyd iterations, best of n_init restarts by
// within-cluster sum of squares; empty clusters re-seeded to the point
// farthest from its assigned center.
KmeansResult kmeans(const std::vector<std::vector<double>>& points, int n_clusters,
                    RngState& rng, int n_init = 10, int max_iter = 300);

void save_labeling_csv(const Labeling& labeling, const std::vector<std::string>& ids,
                       const std::string& path);
Labeling load_labeling_csv(const std::string& path, std::vector<std::string>* ids = nullptr);

void save_centers_csv(const std::vector<std::vector<double>>& centers, const std::string& path);
std::vector<std::vector<double>> load_centers_csv(const std::string& path);

}  // namespace blindcluster
