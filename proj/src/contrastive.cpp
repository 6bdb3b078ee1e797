#include "blindcluster/contrastive.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace blindcluster {

void ContrastiveConfig::validate() const {
    if (!(tau > 0.0)) throw param_error("ContrastiveConfig: tau must be > 0");
    if (k < 1) throw param_error("ContrastiveConfig: k must be >= 1");
    if (!(margin > 0.0 && margin <= 2.0))
        throw param_error("ContrastiveConfig: margin must be in (0, 2] for unit embeddings");
    if (epochs < 0) throw param_error("ContrastiveConfig: epochs must be >= 0");
    if (!(lr > 0.0) || !(weight_decay >= 0.0))
        throw param_error("ContrastiveConfig: bad optimizer settings");
    if (pairs_per_batch < 1) throw param_error("ContrastiveConfig: pairs_per_batch must be >= 1");
    if (!(feature_smooth_sigma >= 0.0))
        throw param_error("ContrastiveConfig: feature_smooth_sigma must be >= 0");
}

FeatureMap descriptor_features(const FeatureMap& raw, double smooth_sigma, int crop_margin) {
    return crop_border(mean_center(gaussian_smooth(minmax_rescale(raw), smooth_sigma)),
                       crop_margin);
}

std::vector<double> anomaly_softmax(const AnomalyMap& anomaly, double tau) {
    if (!(tau > 0.0)) throw param_error("anomaly_softmax: tau must be > 0");
    if (anomaly.size() == 0) throw param_error("anomaly_softmax: empty map");
    const double top = *std::max_element(anomaly.scores.begin(), anomaly.scores.end());
    std::vector<double> w(anomaly.size());
    double sum = 0.0;
    for (std::size_t p = 0; p < w.size(); ++p) {
        w[p] = std::exp((anomaly.scores[p] - top) / tau);
        sum += w[p];
    }
    for (double& v : w) v /= sum;
    return w;
}

ImageDescriptor compute_descriptor(const FeatureMap& features, const AnomalyMap& anomaly,
                                   double tau, int image_index) {
    if (features.height != anomaly.height || features.width != anomaly.width)
        throw param_error("compute_descriptor: feature/anomaly extent mismatch");
    const auto w = anomaly_softmax(anomaly, tau);
    ImageDescriptor d;
    d.image_index = image_index;
    d.values.assign(features.channels, 0.0);
    for (std::size_t p = 0; p < w.size(); ++p) {
        const double* f = features.data.data() + p * features.channels;
        for (int c = 0; c < features.channels; ++c) d.values[c] += w[p] * f[c];
    }
    return d;
}

NeighborLists mine_neighbors(const std::vector<ImageDescriptor>& descriptors, int k,
                             RngState& rng) {
    const int n = static_cast<int>(descriptors.size());
    if (k < 1) throw param_error("mine_neighbors: k must be >= 1");
    if (n <= 2 * k) throw param_error("mine_neighbors: need more than 2k images");

    NeighborLists out;
    out.near.resize(n);
    out.far.resize(n);
    std::vector<double> dist(n);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (std::size_t d = 0; d < descriptors[i].values.size(); ++d) {
                const double diff = descriptors[i].values[d] - descriptors[j].values[d];
                acc += diff * diff;
            }
            dist[j] = std::sqrt(acc);
        }

        std::vector<int> order;
        order.reserve(n - 1);
        for (int j = 0; j < n; ++j)
            if (j != i) order.push_back(j);
        std::sort(order.begin(), order.end(), [&](int a, int b) {
            return dist[a] != dist[b] ? dist[a] < dist[b] : a < b;
        });
        out.near[i].assign(order.begin(), order.begin() + k);

        std::vector<double> others;
        others.reserve(n - 1);
        for (int j : order) others.push_back(dist[j]);
        const double median = quantile_linear(others, 0.5);

        std::vector<int> candidates;
        for (int j : order) {
            if (dist[j] < median) continue;
            if (std::find(out.near[i].begin(), out.near[i].end(), j) != out.near[i].end())
                continue;
            candidates.push_back(j);
        }
        // tie-heavy degenerate case: fill from the farthest non-neighbors
        for (int idx = n - 2; static_cast<int>(candidates.size()) < k && idx >= 0; --idx) {
            const int j = order[idx];
            if (std::find(out.near[i].begin(), out.near[i].end(), j) != out.near[i].end())
                continue;
            if (std::find(candidates.begin(), candidates.end(), j) != candidates.end()) continue;
            candidates.push_back(j);
        }
        std::sort(candidates.begin(), candidates.end());
        for (int t = 0; t < k; ++t) {
            const std::size_t pick =
                t + rng.uniform_below(static_cast<std::uint64_t>(candidates.size() - t));
            std::swap(candidates[t], candidates[pick]);
        }
        out.far[i].assign(candidates.begin(), candidates.begin() + k);
    }
    return out;
}

std::pair<std::vector<int>, std::vector<int>> partition_pixels(const AnomalyMap& anomaly,
                                                               double t) {
    std::vector<int> s, sbar;
    for (std::size_t p = 0; p < anomaly.size(); ++p)
        (anomaly.scores[p] > t ? s : sbar).push_back(static_cast<int>(p));
    return {std::move(s), std::move(sbar)};
}

std::pair<std::vector<std::vector<double>>, std::vector<std::vector<double>>> partition_features(
    const FeatureMap& embedded, const AnomalyMap& anomaly, double t) {
    if (embedded.height != anomaly.height || embedded.width != anomaly.width)
        throw param_error("partition_features: extent mismatch");
    const auto [s, sbar] = partition_pixels(anomaly, t);
    const auto gather = [&](const std::vector<int>& idx) {
        std::vector<std::vector<double>> out;
        out.reserve(idx.size());
        for (int p : idx) {
            const double* v = embedded.data.data() + static_cast<std::size_t>(p) * embedded.channels;
            out.emplace_back(v, v + embedded.channels);
        }
        return out;
    };
    return {gather(s), gather(sbar)};
}

HadsellResult hadsell_loss(const std::vector<double>& e1, const std::vector<double>& e2,
                           bool positive, double margin) {
    if (e1.size() != e2.size()) throw param_error("hadsell_loss: dimension mismatch");
    const std::size_t dim = e1.size();
    HadsellResult res;
    res.grad_e1.assign(dim, 0.0);
    res.grad_e2.assign(dim, 0.0);
    double sq = 0.0;
    for (std::size_t i = 0; i < dim; ++i) {
        const double d = e1[i] - e2[i];
        sq += d * d;
    }
    const double d = std::sqrt(sq);
    if (positive) {
        res.loss = 0.5 * sq;
        for (std::size_t i = 0; i < dim; ++i) {
            res.grad_e1[i] = e1[i] - e2[i];
            res.grad_e2[i] = -(e1[i] - e2[i]);
        }
    } else if (d < margin && d > 0.0) {
        const double gap = margin - d;
        res.loss = 0.5 * gap * gap;
        const double scale = -gap / d;
        for (std::size_t i = 0; i < dim; ++i) {
            res.grad_e1[i] = scale * (e1[i] - e2[i]);
            res.grad_e2[i] = -scale * (e1[i] - e2[i]);
        }
    } else if (d == 0.0) {
        res.loss = 0.5 * margin * margin;  // coincident negatives; kink, zero gradient
    }
    return res;
}

namespace {

struct PixelRef {
    int image;
    int pixel;
};

// forward one pixel through the head with L2 normalization, backprop a
// gradient on the embedding into the grads accumulator
struct HeadWorkspace {
    NetTrace trace;
    std::vector<double> y, e, dy;
};

void head_embed(const PixelNet& head, const double* x, HeadWorkspace& ws) {
    net_forward_trace(head, x, ws.trace);
    ws.y = ws.trace.act.back();
    ws.e = ws.y;
    double sq = 0.0;
    for (double v : ws.y) sq += v * v;
    if (sq > 0.0) {
        const double inv = 1.0 / std::sqrt(sq);
        for (double& v : ws.e) v *= inv;
    }
}

void head_backprop(const PixelNet& head, HeadWorkspace& ws, const std::vector<double>& de,
                   double scale, NetGrads& grads) {
    double sq = 0.0;
    for (double v : ws.y) sq += v * v;
    if (sq == 0.0) return;
    const double norm = std::sqrt(sq);
    double dot = 0.0;
    for (std::size_t i = 0; i < de.size(); ++i) dot += de[i] * ws.e[i];
    ws.dy.resize(de.size());
    for (std::size_t i = 0; i < de.size(); ++i)
        ws.dy[i] = scale * (de[i] - dot * ws.e[i]) / norm;
    net_backward(head, ws.trace, ws.dy, grads, nullptr);
}

}  // namespace

std::vector<ImageDescriptor> raw_descriptors(const Corpus& corpus,
                                             const std::vector<AnomalyMap>& maps,
                                             const ContrastiveConfig& config) {
    if (corpus.items.size() != maps.size())
        throw param_error("raw_descriptors: corpus/maps misaligned");
    std::vector<ImageDescriptor> out;
    out.reserve(corpus.items.size());
    for (std::size_t i = 0; i < corpus.items.size(); ++i) {
        const int margin = (corpus.items[i].features.height - maps[i].height) / 2;
        const FeatureMap feats =
            descriptor_features(corpus.items[i].features, config.feature_smooth_sigma, margin);
        out.push_back(compute_descriptor(feats, maps[i], config.tau, static_cast<int>(i)));
    }
    return out;
}

std::vector<ImageDescriptor> embed_descriptors(const Corpus& corpus,
                                               const std::vector<AnomalyMap>& maps,
                                               const PixelNet& head,
                                               const ContrastiveConfig& config) {
    if (corpus.items.size() != maps.size())
        throw param_error("embed_descriptors: corpus/maps misaligned");
    std::vector<ImageDescriptor> out;
    out.reserve(corpus.items.size());
    for (std::size_t i = 0; i < corpus.items.size(); ++i) {
        const int margin = (corpus.items[i].features.height - maps[i].height) / 2;
        const FeatureMap feats =
            descriptor_features(corpus.items[i].features, config.feature_smooth_sigma, margin);
        const FeatureMap emb = head_forward(head, feats);
        out.push_back(compute_descriptor(emb, maps[i], config.tau, static_cast<int>(i)));
    }
    return out;
}

PixelNet train_head(const Corpus& corpus, const std::vector<AnomalyMap>& anomaly_maps,
                    const ThresholdEstimate& threshold, const ContrastiveConfig& config,
                    RngState& rng) {
    config.validate();
    const int n = static_cast<int>(corpus.items.size());
    if (n == 0 || anomaly_maps.size() != corpus.items.size())
        throw param_error("train_head: corpus/maps misaligned");

    // cache the piped features once; the head evolves, its input does not
    std::vector<FeatureMap> feats(n);
    for (int i = 0; i < n; ++i) {
        const int margin = (corpus.items[i].features.height - anomaly_maps[i].height) / 2;
        feats[i] =
            descriptor_features(corpus.items[i].features, config.feature_smooth_sigma, margin);
        if (feats[i].height != anomaly_maps[i].height || feats[i].width != anomaly_maps[i].width)
            throw param_error("train_head: feature/map extent mismatch at item " +
                              std::to_string(i));
    }

    const auto descriptors = raw_descriptors(corpus, anomaly_maps, config);
    const NeighborLists lists = mine_neighbors(descriptors, config.k, rng);

    std::vector<std::vector<int>> anomalous(n), normal(n);
    bool any_anomalous = false;
    for (int i = 0; i < n; ++i) {
        auto [s, sbar] = partition_pixels(anomaly_maps[i], threshold.t);
        any_anomalous = any_anomalous || !s.empty();
        anomalous[i] = std::move(s);
        normal[i] = std::move(sbar);
    }
    if (!any_anomalous)
        throw numeric_error(
            "train_head: no features above the threshold in any image; inspect the threshold "
            "estimate");

    // pooled sets: P = S_i u S_{N(i)}, Pbar likewise, C = S_{far(i)}
    std::vector<std::vector<PixelRef>> pool_s(n), pool_sbar(n), pool_far(n);
    for (int i = 0; i < n; ++i) {
        const auto add = [](std::vector<PixelRef>& dst, int img, const std::vector<int>& idx) {
            for (int p : idx) dst.push_back({img, p});
        };
        add(pool_s[i], i, anomalous[i]);
        add(pool_sbar[i], i, normal[i]);
        for (int j : lists.near[i]) {
            add(pool_s[i], j, anomalous[j]);
            add(pool_sbar[i], j, normal[j]);
        }
        for (int j : lists.far[i]) add(pool_far[i], j, anomalous[j]);
    }

    PixelNet head = make_head(corpus.channels(), rng);
    const std::size_t n_params = net_param_vector(head).size();
    AdamWState opt(n_params, config.lr, config.weight_decay);

    std::vector<int> image_order(n);
    std::iota(image_order.begin(), image_order.end(), 0);

    struct Family {
        const std::vector<PixelRef>* left;
        const std::vector<PixelRef>* right;
        bool positive;
    };
    std::vector<PixelRef> own_s, own_sbar;
    HeadWorkspace ws1, ws2;

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        for (int t = n - 1; t > 0; --t) {
            const std::size_t j = rng.uniform_below(static_cast<std::uint64_t>(t + 1));
            std::swap(image_order[t], image_order[j]);
        }
        for (int oi = 0; oi < n; ++oi) {
            const int i = image_order[oi];
            own_s.clear();
            own_sbar.clear();
            for (int p : anomalous[i]) own_s.push_back({i, p});
            for (int p : normal[i]) own_sbar.push_back({i, p});

            std::vector<Family> families;
            const auto usable = [](const std::vector<PixelRef>& a, const std::vector<PixelRef>& b) {
                return !a.empty() && !b.empty();
            };
            if (usable(own_s, pool_s[i])) families.push_back({&own_s, &pool_s[i], true});
            if (usable(own_sbar, pool_sbar[i])) families.push_back({&own_sbar, &pool_sbar[i], true});
            if (usable(own_s, pool_sbar[i])) families.push_back({&own_s, &pool_sbar[i], false});
            if (usable(pool_s[i], pool_far[i])) families.push_back({&pool_s[i], &pool_far[i], false});
            if (families.empty()) continue;

            const int base = config.pairs_per_batch / static_cast<int>(families.size());
            const int extra = config.pairs_per_batch % static_cast<int>(families.size());

            NetGrads grads = net_grads_like(head);
            int n_pairs = 0;
            for (std::size_t f = 0; f < families.size(); ++f)
                n_pairs += base + (static_cast<int>(f) < extra ? 1 : 0);
            const double scale = 1.0 / static_cast<double>(n_pairs);

            for (std::size_t f = 0; f < families.size(); ++f) {
                const Family& fam = families[f];
                const int quota = base + (static_cast<int>(f) < extra ? 1 : 0);
                for (int q = 0; q < quota; ++q) {
                    const PixelRef a =
                        (*fam.left)[rng.uniform_below(static_cast<std::uint64_t>(fam.left->size()))];
                    const PixelRef b = (*fam.right)[rng.uniform_below(
                        static_cast<std::uint64_t>(fam.right->size()))];
                    const double* xa =
                        feats[a.image].data.data() +
                        static_cast<std::size_t>(a.pixel) * feats[a.image].channels;
                    const double* xb =
                        feats[b.image].data.data() +
                        static_cast<std::size_t>(b.pixel) * feats[b.image].channels;
                    head_embed(head, xa, ws1);
                    head_embed(head, xb, ws2);
                    const HadsellResult hl = hadsell_loss(ws1.e, ws2.e, fam.positive, config.margin);
                    head_backprop(head, ws1, hl.grad_e1, scale, grads);
                    head_backprop(head, ws2, hl.grad_e2, scale, grads);
                }
            }

            adamw_begin_step(opt);
            std::size_t off = 0;
            for (std::size_t l = 0; l < head.layers.size(); ++l) {
                adamw_apply(opt, head.layers[l].w.data(), grads.layers[l].w.data(),
                            head.layers[l].w.size(), off);
                off += head.layers[l].w.size();
                adamw_apply(opt, head.layers[l].b.data(), grads.layers[l].b.data(),
                            head.layers[l].b.size(), off);
                off += head.layers[l].b.size();
            }
        }
    }
    head.validate();
    return head;
}

}  // namespace blindcluster
