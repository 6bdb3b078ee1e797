#pragma once

#include <utility>
#include <vector>

#include "blindcluster/corpus.hpp"
#include "blindcluster/descriptor.hpp"
#include "blindcluster/localize.hpp"
#include "blindcluster/nets.hpp"

namespace blindcluster {

struct ContrastiveConfig {
    double tau = 0.002;
    int k = 3;
    double margin = 0.5;
    int epochs = 10;
    double lr = 5e-4;
    double weight_decay = 0.01;
    int pairs_per_batch = 1024;
    double feature_smooth_sigma = 2.0;

    void validate() const;
};

// Canonical feature pipeline for descriptor pooling and head training:
// minmax_rescale -> gaussian_smooth(sigma) -> mean_center -> crop_border.
FeatureMap descriptor_features(const FeatureMap& raw, double smooth_sigma, int crop_margin);

// Softmax pooling weights over the anomaly map at temperature tau,
// max-subtracted for stability. Sum to 1.
std::vector<double> anomaly_softmax(const AnomalyMap& anomaly, double tau);

// D = sum_xy w(x,y) * F(x,y); extents must match (both post-crop).
ImageDescriptor compute_descriptor(const FeatureMap& features, const AnomalyMap& anomaly,
                                   double tau, int image_index = 0);

struct NeighborLists {
    std::vector<std::vector<int>> near;  // k nearest by descriptor distance
    std::vector<std::vector<int>> far;   // k sampled from the farthest half
};
NeighborLists mine_neighbors(const std::vector<ImageDescriptor>& descriptors, int k,
                             RngState& rng);

// Pixel indices with score > t and the complement.
std::pair<std::vector<int>, std::vector<int>> partition_pixels(const AnomalyMap& anomaly,
                                                               double t);
// Vector-set form over an embedded feature map.
std::pair<std::vector<std::vector<double>>, std::vector<std::vector<double>>> partition_features(
    const FeatureMap& embedded, const AnomalyMap& anomaly, double t);

struct HadsellResult {
    double loss = 0.0;
    std::vector<double> grad_e1, grad_e2;
};
// Positive: 1/2 d^2. Negative: 1/2 max(0, margin - d)^2. Exact gradients,
// zero in the inactive hinge region.
HadsellResult hadsell_loss(const std::vector<double>& e1, const std::vector<double>& e2,
                           bool positive, double margin);

// Trains the projection head with per-image batches over the four pair
// families (S x P, S~ x P~ positive; S x P~, P x C negative).
PixelNet train_head(const Corpus& corpus, const std::vector<AnomalyMap>& anomaly_maps,
                    const ThresholdEstimate& threshold, const ContrastiveConfig& config,
                    RngState& rng);

// Eq.-2 pooling on the canonical feature pipeline (no head).
std::vector<ImageDescriptor> raw_descriptors(const Corpus& corpus,
                                             const std::vector<AnomalyMap>& maps,
                                             const ContrastiveConfig& config);
// Same pooling on unit-norm head embeddings of the piped features.
std::vector<ImageDescriptor> embed_descriptors(const Corpus& corpus,
                                               const std::vector<AnomalyMap>& maps,
                                               const PixelNet& head,
                                               const ContrastiveConfig& config);

}  // namespace blindcluster
