#pragma once

#include <vector>

#include "blindcluster/corpus.hpp"
#include "blindcluster/descriptor.hpp"
#include "blindcluster/nets.hpp"

namespace blindcluster {

struct FcaConfig {
    double sigma_p = 3.0;    // local window scale
    double sigma_s = 1.0;    // final score smoothing
    int border_margin = 9;   // = ceil(3 * sigma_p)

    void validate() const;
};

// residual = rescaled features - decode(mu(encode(.))), element-wise.
FeatureMap vae_residual(const FeatureMap& rescaled, const VaeModel& model);

// Per-pixel 1D optimal-transport contribution, per channel: Gaussian-weighted
// local rank u of the pixel value within the window of radius ceil(3*sigma_p),
// mapped through the global empirical quantile function; contribution is the
// squared difference (v - Q(u))^2, summed over channels, then smoothed with
// sigma_s.
AnomalyMap fca_score(const FeatureMap& residual, const FcaConfig& config);

// Per item: minmax_rescale -> vae_residual -> fca_score -> crop_border.
// sigma_s inside fca_score is the single final smoothing pass.
std::vector<AnomalyMap> localize(const Corpus& corpus, const VaeModel& model,
                                 const FcaConfig& config, int n_threads = 1);
// Ablation route: scores raw rescaled features directly (no VAE residual).
std::vector<AnomalyMap> localize_raw(const Corpus& corpus, const FcaConfig& config,
                                     int n_threads = 1);

// Image-level anomaly score: the maximum pixel score.
double image_score(const AnomalyMap& map);

struct ThresholdEstimate {
    double t = 0.0;
    double normal_ratio = 0.0;
    int normal_cluster_index = 0;
};

// k-means the descriptors, take the cluster with the smallest mean image
// score as normal, and binarize at the corresponding quantile of the
// image-level scores.
ThresholdEstimate estimate_threshold(const std::vector<ImageDescriptor>& descriptors,
                                     const std::vector<double>& image_scores, int n_clusters,
                                     RngState& rng);

// Quantile by linear interpolation between order statistics (pos = q*(n-1)).
double quantile_linear(std::vector<double> values, double q);

}  // namespace blindcluster
