#include "blindcluster/tensor.hpp"

#include <algorithm>
#include <cmath>

namespace blindcluster {

FeatureMap::FeatureMap(int h, int w, int c, double fill) {
    if (h < 1 || w < 1 || c < 1) throw param_error("FeatureMap: dimensions must be >= 1");
    height = h;
    width = w;
    channels = c;
    data.assign(static_cast<std::size_t>(h) * w * c, fill);
}

AnomalyMap::AnomalyMap(int h, int w, double fill) {
    if (h < 1 || w < 1) throw param_error("AnomalyMap: dimensions must be >= 1");
    height = h;
    width = w;
    scores.assign(static_cast<std::size_t>(h) * w, fill);
}

std::vector<double> gaussian_kernel(double sigma) {
    if (!(sigma >= 0.0) || !std::isfinite(sigma))
        throw param_error("gaussian_kernel: sigma must be finite and >= 0");
    if (sigma == 0.0) return {1.0};
    const int radius = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> k(2 * radius + 1);
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        const double v = std::exp(-0.5 * (i * i) / (sigma * sigma));
        k[i + radius] = v;
        sum += v;
    }
    for (double& v : k) v /= sum;
    return k;
}

namespace {

// Separable convolution of one plane stored with an element stride
// (interleaved channels). Edge replication at the borders.
void smooth_plane(const double* src, double* dst, int h, int w, std::size_t stride,
                  const std::vector<double>& kernel) {
    const int radius = static_cast<int>(kernel.size() / 2);
    std::vector<double> tmp(static_cast<std::size_t>(h) * w);
    // horizontal
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int i = -radius; i <= radius; ++i) {
                const int xi = std::clamp(x + i, 0, w - 1);
                acc += kernel[i + radius] * src[(static_cast<std::size_t>(y) * w + xi) * stride];
            }
            tmp[static_cast<std::size_t>(y) * w + x] = acc;
        }
    }
    // vertical
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int i = -radius; i <= radius; ++i) {
                const int yi = std::clamp(y + i, 0, h - 1);
                acc += kernel[i + radius] * tmp[static_cast<std::size_t>(yi) * w + x];
            }
            dst[(static_cast<std::size_t>(y) * w + x) * stride] = acc;
        }
    }
}

}  // namespace

FeatureMap gaussian_smooth(const FeatureMap& map, double sigma) {
    if (map.size() == 0) throw param_error("gaussian_smooth: empty map");
    if (sigma == 0.0) return map;
    const auto kernel = gaussian_kernel(sigma);
    FeatureMap out(map.height, map.width, map.channels);
    for (int c = 0; c < map.channels; ++c)
        smooth_plane(map.data.data() + c, out.data.data() + c, map.height, map.width,
                     map.channels, kernel);
    check_finite(out, "gaussian_smooth");
    return out;
}

AnomalyMap gaussian_smooth(const AnomalyMap& map, double sigma) {
    if (map.size() == 0) throw param_error("gaussian_smooth: empty map");
    if (sigma == 0.0) return map;
    const auto kernel = gaussian_kernel(sigma);
    AnomalyMap out(map.height, map.width);
    smooth_plane(map.scores.data(), out.scores.data(), map.height, map.width, 1, kernel);
    check_finite(out, "gaussian_smooth");
    return out;
}

FeatureMap crop_border(const FeatureMap& map, int margin) {
    if (margin < 0) throw param_error("crop_border: negative margin");
    if (2 * margin >= std::min(map.height, map.width))
        throw param_error("crop_border: margin too large for map extent");
    if (margin == 0) return map;
    FeatureMap out(map.height - 2 * margin, map.width - 2 * margin, map.channels);
    for (int y = 0; y < out.height; ++y)
        for (int x = 0; x < out.width; ++x)
            for (int c = 0; c < out.channels; ++c)
                out.at(y, x, c) = map.at(y + margin, x + margin, c);
    return out;
}

AnomalyMap crop_border(const AnomalyMap& map, int margin) {
    if (margin < 0) throw param_error("crop_border: negative margin");
    if (2 * margin >= std::min(map.height, map.width))
        throw param_error("crop_border: margin too large for map extent");
    if (margin == 0) return map;
    AnomalyMap out(map.height - 2 * margin, map.width - 2 * margin);
    for (int y = 0; y < out.height; ++y)
        for (int x = 0; x < out.width; ++x)
            out.at(y, x) = map.at(y + margin, x + margin);
    return out;
}

FeatureMap minmax_rescale(const FeatureMap& map) {
    if (map.size() == 0) throw param_error("minmax_rescale: empty map");
    FeatureMap out(map.height, map.width, map.channels);
    const std::size_t plane = static_cast<std::size_t>(map.height) * map.width;
    for (int c = 0; c < map.channels; ++c) {
        double lo = map.data[c], hi = map.data[c];
        for (std::size_t p = 0; p < plane; ++p) {
            const double v = map.data[p * map.channels + c];
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        const double range = hi - lo;
        for (std::size_t p = 0; p < plane; ++p) {
            const double v = map.data[p * map.channels + c];
            out.data[p * map.channels + c] = range > 0.0 ? (v - lo) / range : 0.0;
        }
    }
    check_finite(out, "minmax_rescale");
    return out;
}

FeatureMap mean_center(const FeatureMap& map) {
    if (map.size() == 0) throw param_error("mean_center: empty map");
    FeatureMap out(map.height, map.width, map.channels);
    const std::size_t plane = static_cast<std::size_t>(map.height) * map.width;
    for (int c = 0; c < map.channels; ++c) {
        double sum = 0.0;
        for (std::size_t p = 0; p < plane; ++p) sum += map.data[p * map.channels + c];
        const double mean = sum / static_cast<double>(plane);
        for (std::size_t p = 0; p < plane; ++p)
            out.data[p * map.channels + c] = map.data[p * map.channels + c] - mean;
    }
    check_finite(out, "mean_center");
    return out;
}

void check_finite(const FeatureMap& map, const char* where) {
    for (double v : map.data)
        if (!std::isfinite(v)) throw numeric_error(std::string(where) + ": non-finite value");
}

void check_finite(const AnomalyMap& map, const char* where) {
    for (double v : map.scores)
        if (!std::isfinite(v)) throw numeric_error(std::string(where) + ": non-finite value");
}

}  // namespace blindcluster
