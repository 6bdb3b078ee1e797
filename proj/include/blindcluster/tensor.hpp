#pragma once

#include <cstddef>
#include <vector>

#include "blindcluster/common.hpp"

namespace blindcluster {

// Dense H x W x C grid of doubles, row-major (y, x, c).
struct FeatureMap {
    int height = 0;
    int width = 0;
    int channels = 0;
    std::vector<double> data;

    FeatureMap() = default;
    FeatureMap(int h, int w, int c, double fill = 0.0);

    std::size_t index(int y, int x, int ch) const {
        return (static_cast<std::size_t>(y) * width + x) * channels + ch;
    }
    double& at(int y, int x, int ch) { return data[index(y, x, ch)]; }
    double at(int y, int x, int ch) const { return data[index(y, x, ch)]; }
    std::size_t size() const { return data.size(); }
    bool same_shape(const FeatureMap& o) const {
        return height == o.height && width == o.width && channels == o.channels;
    }
};

// Per-pixel scalar score grid; higher = more anomalous.
struct AnomalyMap {
    int height = 0;
    int width = 0;
    std::vector<double> scores;

    AnomalyMap() = default;
    AnomalyMap(int h, int w, double fill = 0.0);

    std::size_t index(int y, int x) const {
        return static_cast<std::size_t>(y) * width + x;
    }
    double& at(int y, int x) { return scores[index(y, x)]; }
    double at(int y, int x) const { return scores[index(y, x)]; }
    std::size_t size() const { return scores.size(); }
};

// Normalized 1D Gaussian kernel with radius ceil(3*sigma).
// sigma = 0 yields the identity kernel {1}.
std::vector<double> gaussian_kernel(double sigma);

// Separable Gaussian convolution, edge replication at the boundary.
FeatureMap gaussian_smooth(const FeatureMap& map, double sigma);
AnomalyMap gaussian_smooth(const AnomalyMap& map, double sigma);

FeatureMap crop_border(const FeatureMap& map, int margin);
AnomalyMap crop_border(const AnomalyMap& map, int margin);

// Per channel, per image: v' = (v - min) / (max - min); constant channels
// become all zeros.
FeatureMap minmax_rescale(const FeatureMap& map);

// Per channel, per image: subtract the channel's spatial mean.
FeatureMap mean_center(const FeatureMap& map);

// Throws numeric_error if any value is NaN/Inf.
void check_finite(const FeatureMap& map, const char* where);
void check_finite(const AnomalyMap& map, const char* where);

}  // namespace blindcluster
