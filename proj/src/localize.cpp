#include "blindcluster/localize.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <mutex>
#include <thread>

#include "blindcluster/cluster.hpp"

namespace blindcluster {

void FcaConfig::validate() const {
    if (!(sigma_p > 0.0) || !std::isfinite(sigma_p))
        throw param_error("FcaConfig: sigma_p must be finite and > 0");
    if (!(sigma_s >= 0.0) || !std::isfinite(sigma_s))
        throw param_error("FcaConfig: sigma_s must be finite and >= 0");
    if (border_margin < 0) throw param_error("FcaConfig: border_margin must be >= 0");
}

FeatureMap vae_residual(const FeatureMap& rescaled, const VaeModel& model) {
    const FeatureMap recon = vae_reconstruct_mean(model, rescaled);
    FeatureMap out(rescaled.height, rescaled.width, rescaled.channels);
    for (std::size_t i = 0; i < out.data.size(); ++i)
        out.data[i] = rescaled.data[i] - recon.data[i];
    check_finite(out, "vae_residual");
    return out;
}

AnomalyMap fca_score(const FeatureMap& residual, const FcaConfig& config) {
    config.validate();
    check_finite(residual, "fca_score input");
    const int h = residual.height, w = residual.width, c = residual.channels;
    const int radius = static_cast<int>(std::ceil(3.0 * config.sigma_p));
    if (std::min(h, w) <= 2 * radius)
        throw param_error("fca_score: spatial extent too small for sigma_p window");

    // window weight table
    const int side = 2 * radius + 1;
    std::vector<double> wtab(static_cast<std::size_t>(side) * side);
    for (int dy = -radius; dy <= radius; ++dy)
        for (int dx = -radius; dx <= radius; ++dx)
            wtab[static_cast<std::size_t>(dy + radius) * side + (dx + radius)] =
                std::exp(-0.5 * (dy * dy + dx * dx) / (config.sigma_p * config.sigma_p));

    const std::size_t plane = static_cast<std::size_t>(h) * w;
    AnomalyMap score(h, w, 0.0);
    std::vector<double> channel(plane), sorted(plane);

    for (int ch = 0; ch < c; ++ch) {
        for (std::size_t p = 0; p < plane; ++p) channel[p] = residual.data[p * c + ch];
        sorted = channel;
        std::sort(sorted.begin(), sorted.end());
        const auto quantile = [&](double u) {
            const double pos = u * static_cast<double>(plane - 1);
            const std::size_t i0 = static_cast<std::size_t>(pos);
            const double frac = pos - static_cast<double>(i0);
            return i0 + 1 < plane ? sorted[i0] * (1.0 - frac) + sorted[i0 + 1] * frac
                                  : sorted[plane - 1];
        };

        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                const double v = channel[static_cast<std::size_t>(y) * w + x];
                double wsum = 0.0, below = 0.0, ties = 0.0;
                const int y0 = std::max(0, y - radius), y1 = std::min(h - 1, y + radius);
                const int x0 = std::max(0, x - radius), x1 = std::min(w - 1, x + radius);
                for (int yy = y0; yy <= y1; ++yy) {
                    const double* row = channel.data() + static_cast<std::size_t>(yy) * w;
                    const double* wrow =
                        wtab.data() + static_cast<std::size_t>(yy - y + radius) * side +
                        (x0 - x + radius);
                    for (int xx = x0; xx <= x1; ++xx) {
                        const double wt = wrow[xx - x0];
                        const double q = row[xx];
                        wsum += wt;
                        if (q < v)
                            below += wt;
                        else if (q == v)
                            ties += wt;
                    }
                }
                const double u = (below + 0.5 * ties) / wsum;
                const double d = v - quantile(u);
                score.scores[static_cast<std::size_t>(y) * w + x] += d * d;
            }
        }
    }
    return gaussian_smooth(score, config.sigma_s);
}

namespace {

std::vector<AnomalyMap> localize_impl(const Corpus& corpus, const VaeModel* model,
                                      const FcaConfig& config, int n_threads) {
    config.validate();
    corpus.validate();
    const int n = static_cast<int>(corpus.items.size());
    std::vector<AnomalyMap> maps(n);
    const auto work = [&](int i) {
        const FeatureMap rescaled = minmax_rescale(corpus.items[i].features);
        const FeatureMap input = model ? vae_residual(rescaled, *model) : rescaled;
        maps[i] = crop_border(fca_score(input, config), config.border_margin);
    };
    if (n_threads <= 1) {
        for (int i = 0; i < n; ++i) work(i);
    } else {
        // items are independent; per-item results are identical regardless
        // of the thread count
        std::vector<std::thread> pool;
        const int t_count = std::min(n_threads, n);
        pool.reserve(t_count);
        std::exception_ptr first_error;
        std::mutex err_mutex;
        for (int t = 0; t < t_count; ++t) {
            pool.emplace_back([&, t]() {
                for (int i = t; i < n; i += t_count) {
                    try {
                        work(i);
                    } catch (...) {
                        std::lock_guard<std::mutex> lock(err_mutex);
                        if (!first_error) first_error = std::current_exception();
                    }
                }
            });
        }
        for (auto& th : pool) th.join();
        if (first_error) std::rethrow_exception(first_error);
    }
    return maps;
}

}  // namespace

std::vector<AnomalyMap> localize(const Corpus& corpus, const VaeModel& model,
                                 const FcaConfig& config, int n_threads) {
    return localize_impl(corpus, &model, config, n_threads);
}

std::vector<AnomalyMap> localize_raw(const Corpus& corpus, const FcaConfig& config,
                                     int n_threads) {
    return localize_impl(corpus, nullptr, config, n_threads);
}

double image_score(const AnomalyMap& map) {
    if (map.size() == 0) throw param_error("image_score: empty map");
    return *std::max_element(map.scores.begin(), map.scores.end());
}

double quantile_linear(std::vector<double> values, double q) {
    if (values.empty()) throw param_error("quantile_linear: empty input");
    q = std::clamp(q, 0.0, 1.0);
    std::sort(values.begin(), values.end());
    const double pos = q * static_cast<double>(values.size() - 1);
    const std::size_t i0 = static_cast<std::size_t>(pos);
    const double frac = pos - static_cast<double>(i0);
    return i0 + 1 < values.size() ? values[i0] * (1.0 - frac) + values[i0 + 1] * frac
                                  : values.back();
}

ThresholdEstimate estimate_threshold(const std::vector<ImageDescriptor>& descriptors,
                                     const std::vector<double>& image_scores, int n_clusters,
                                     RngState& rng) {
    const int n = static_cast<int>(descriptors.size());
    if (n == 0 || image_scores.size() != descriptors.size())
        throw param_error("estimate_threshold: descriptor/score lists misaligned");
    if (n_clusters < 2) throw param_error("estimate_threshold: n_clusters must be >= 2");
    if (n_clusters > n) throw param_error("estimate_threshold: n_clusters exceeds corpus size");

    std::vector<std::vector<double>> points(n);
    for (int i = 0; i < n; ++i) points[i] = descriptors[i].values;
    const KmeansResult km = kmeans(points, n_clusters, rng);

    std::vector<double> mean_score(n_clusters, 0.0);
    std::vector<int> count(n_clusters, 0);
    for (int i = 0; i < n; ++i) {
        mean_score[km.labeling.labels[i]] += image_scores[i];
        count[km.labeling.labels[i]] += 1;
    }
    int normal = 0;
    double best = std::numeric_limits<double>::infinity();
    for (int cidx = 0; cidx < n_clusters; ++cidx) {
        if (count[cidx] == 0) continue;
        const double m = mean_score[cidx] / count[cidx];
        if (m < best) {
            best = m;
            normal = cidx;
        }
    }

    ThresholdEstimate est;
    est.normal_cluster_index = normal;
    est.normal_ratio = static_cast<double>(count[normal]) / n;
    est.t = quantile_linear(image_scores, est.normal_ratio);
    return est;
}

}  // namespace blindcluster
