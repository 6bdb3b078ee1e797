#include "blindcluster/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <queue>

#include "blindcluster/contrastive.hpp"

namespace blindcluster {

ContingencyTable ContingencyTable::from(const Labeling& pred, const Labeling& truth) {
    if (pred.labels.size() != truth.labels.size())
        throw param_error("ContingencyTable: labeling length mismatch");
    if (pred.labels.empty()) throw param_error("ContingencyTable: empty labelings");
    ContingencyTable t;
    t.n_pred = pred.n_clusters;
    t.n_true = truth.n_clusters;
    t.counts.assign(static_cast<std::size_t>(t.n_pred) * t.n_true, 0);
    for (std::size_t i = 0; i < pred.labels.size(); ++i)
        t.counts[static_cast<std::size_t>(pred.labels[i]) * t.n_true + truth.labels[i]] += 1;
    return t;
}

long long ContingencyTable::total() const {
    return std::accumulate(counts.begin(), counts.end(), 0LL);
}

namespace {

double entropy(const std::vector<long long>& marginal, long long n) {
    double h = 0.0;
    for (long long c : marginal) {
        if (c == 0) continue;
        const double p = static_cast<double>(c) / n;
        h -= p * std::log(p);
    }
    return h;
}

std::pair<std::vector<long long>, std::vector<long long>> marginals(const ContingencyTable& t) {
    std::vector<long long> a(t.n_pred, 0), b(t.n_true, 0);
    for (int p = 0; p < t.n_pred; ++p)
        for (int q = 0; q < t.n_true; ++q) {
            a[p] += t.at(p, q);
            b[q] += t.at(p, q);
        }
    return {a, b};
}

}  // namespace

double nmi(const Labeling& a, const Labeling& b) {
    const ContingencyTable t = ContingencyTable::from(a, b);
    const long long n = t.total();
    const auto [ma, mb] = marginals(t);
    const double ha = entropy(ma, n), hb = entropy(mb, n);
    const double denom = 0.5 * (ha + hb);
    if (denom == 0.0) return 1.0;  // both single-cluster, identical partitions
    double mi = 0.0;
    for (int p = 0; p < t.n_pred; ++p)
        for (int q = 0; q < t.n_true; ++q) {
            const long long c = t.at(p, q);
            if (c == 0) continue;
            mi += (static_cast<double>(c) / n) *
                  std::log(static_cast<double>(n) * c / (static_cast<double>(ma[p]) * mb[q]));
        }
    return mi / denom;
}

double ari(const Labeling& a, const Labeling& b) {
    const ContingencyTable t = ContingencyTable::from(a, b);
    const long long n = t.total();
    const auto [ma, mb] = marginals(t);
    const auto choose2 = [](long long x) { return 0.5 * x * (x - 1); };
    double index = 0.0;
    for (long long c : t.counts) index += choose2(c);
    double sum_a = 0.0, sum_b = 0.0;
    for (long long c : ma) sum_a += choose2(c);
    for (long long c : mb) sum_b += choose2(c);
    const double total_pairs = choose2(n);
    const double expected = total_pairs > 0.0 ? sum_a * sum_b / total_pairs : 0.0;
    const double max_index = 0.5 * (sum_a + sum_b);
    const double denom = max_index - expected;
    if (denom == 0.0) return 1.0;  // degenerate identical trivial partitions
    return (index - expected) / denom;
}

std::vector<int> solve_assignment(const std::vector<std::vector<double>>& cost) {
    const int n = static_cast<int>(cost.size());
    if (n == 0) throw param_error("solve_assignment: empty cost matrix");
    for (const auto& row : cost)
        if (static_cast<int>(row.size()) != n)
            throw param_error("solve_assignment: cost matrix must be square");

    // shortest augmenting path with potentials (Jonker-Volgenant style)
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
    std::vector<int> p(n + 1, 0), way(n + 1, 0);
    for (int i = 1; i <= n; ++i) {
        p[0] = i;
        int j0 = 0;
        std::vector<double> minv(n + 1, inf);
        std::vector<char> used(n + 1, 0);
        do {
            used[j0] = 1;
            const int i0 = p[j0];
            int j1 = 0;
            double delta = inf;
            for (int j = 1; j <= n; ++j) {
                if (used[j]) continue;
                const double cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (int j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            const int j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0);
    }
    std::vector<int> row_to_col(n, -1);
    for (int j = 1; j <= n; ++j)
        if (p[j]) row_to_col[p[j] - 1] = j - 1;
    return row_to_col;
}

double f1_assignment(const Labeling& pred, const Labeling& truth) {
    const ContingencyTable t = ContingencyTable::from(pred, truth);
    const int m = std::max(t.n_pred, t.n_true);
    std::vector<std::vector<double>> cost(m, std::vector<double>(m, 0.0));
    for (int p = 0; p < t.n_pred; ++p)
        for (int q = 0; q < t.n_true; ++q) cost[p][q] = -static_cast<double>(t.at(p, q));
    const auto assign = solve_assignment(cost);
    long long matched = 0;
    for (int p = 0; p < t.n_pred; ++p)
        if (assign[p] < t.n_true) matched += t.at(p, assign[p]);
    return static_cast<double>(matched) / static_cast<double>(t.total());
}

double auroc(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size() || scores.empty())
        throw param_error("auroc: scores/labels misaligned");
    long long n_pos = 0, n_neg = 0;
    for (int l : labels) (l != 0 ? n_pos : n_neg) += 1;
    if (n_pos == 0 || n_neg == 0)
        throw numeric_error("auroc: undefined for single-class input");

    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    double rank_sum_pos = 0.0;
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
        const double avg_rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j + 1));
        for (std::size_t k = i; k <= j; ++k)
            if (labels[order[k]] != 0) rank_sum_pos += avg_rank;
        i = j + 1;
    }
    return (rank_sum_pos - 0.5 * n_pos * (n_pos + 1)) /
           (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

namespace {

// 8-connected components of a binary mask; returns labels (-1 outside) and
// region sizes.
std::pair<std::vector<int>, std::vector<long long>> connected_components(const FeatureMap& mask) {
    const int h = mask.height, w = mask.width;
    std::vector<int> labels(static_cast<std::size_t>(h) * w, -1);
    std::vector<long long> sizes;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const std::size_t p = static_cast<std::size_t>(y) * w + x;
            if (mask.data[p] == 0.0 || labels[p] != -1) continue;
            const int id = static_cast<int>(sizes.size());
            sizes.push_back(0);
            std::queue<std::pair<int, int>> frontier;
            frontier.emplace(y, x);
            labels[p] = id;
            while (!frontier.empty()) {
                const auto [cy, cx] = frontier.front();
                frontier.pop();
                sizes[id] += 1;
                for (int dy = -1; dy <= 1; ++dy) {
                    for (int dx = -1; dx <= 1; ++dx) {
                        if (dy == 0 && dx == 0) continue;
                        const int ny = cy + dy, nx = cx + dx;
                        if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
                        const std::size_t q = static_cast<std::size_t>(ny) * w + nx;
                        if (mask.data[q] == 0.0 || labels[q] != -1) continue;
                        labels[q] = id;
                        frontier.emplace(ny, nx);
                    }
                }
            }
        }
    }
    return {labels, sizes};
}

}  // namespace

double pro(const std::vector<AnomalyMap>& score_maps, const std::vector<FeatureMap>& gt_masks,
           double fpr_max, int n_thresholds) {
    if (score_maps.size() != gt_masks.size() || score_maps.empty())
        throw param_error("pro: maps/masks misaligned");
    if (!(fpr_max > 0.0 && fpr_max <= 1.0)) throw param_error("pro: fpr_max must be in (0, 1]");
    if (n_thresholds < 2) throw param_error("pro: n_thresholds must be >= 2");

    struct Pixel {
        double score;
        int region;  // global region id or -1
    };
    std::vector<Pixel> pixels;
    std::vector<long long> region_sizes;
    long long n_normal = 0;
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();

    for (std::size_t i = 0; i < score_maps.size(); ++i) {
        const AnomalyMap& m = score_maps[i];
        const FeatureMap& g = gt_masks[i];
        if (g.height != m.height || g.width != m.width || g.channels != 1)
            throw param_error("pro: mask extent mismatch at item " + std::to_string(i));
        const auto [labels, sizes] = connected_components(g);
        const int base = static_cast<int>(region_sizes.size());
        region_sizes.insert(region_sizes.end(), sizes.begin(), sizes.end());
        for (std::size_t p = 0; p < m.scores.size(); ++p) {
            const int r = labels[p] >= 0 ? base + labels[p] : -1;
            if (r < 0) n_normal += 1;
            pixels.push_back({m.scores[p], r});
            lo = std::min(lo, m.scores[p]);
            hi = std::max(hi, m.scores[p]);
        }
    }
    if (region_sizes.empty()) throw numeric_error("pro: no anomalous pixels in ground truth");
    if (n_normal == 0) throw numeric_error("pro: no normal pixels in ground truth");

    std::sort(pixels.begin(), pixels.end(),
              [](const Pixel& a, const Pixel& b) { return a.score > b.score; });

    std::vector<long long> region_hits(region_sizes.size(), 0);
    long long fp = 0;
    std::size_t ptr = 0;
    const double n_regions = static_cast<double>(region_sizes.size());

    double area = 0.0;
    double prev_fpr = 0.0, prev_overlap = 0.0;
    bool done = false;
    for (int k = 0; k < n_thresholds && !done; ++k) {
        const double t = hi == lo ? lo
                                  : hi - (hi - lo) * static_cast<double>(k) /
                                            static_cast<double>(n_thresholds - 1);
        while (ptr < pixels.size() && pixels[ptr].score >= t) {
            if (pixels[ptr].region >= 0)
                region_hits[pixels[ptr].region] += 1;
            else
                fp += 1;
            ++ptr;
        }
        double overlap = 0.0;
        for (std::size_t r = 0; r < region_sizes.size(); ++r)
            overlap += static_cast<double>(region_hits[r]) / static_cast<double>(region_sizes[r]);
        overlap /= n_regions;
        const double fpr = static_cast<double>(fp) / static_cast<double>(n_normal);

        if (fpr >= fpr_max) {
            // interpolate the overlap at the fpr_max boundary
            const double frac =
                fpr > prev_fpr ? (fpr_max - prev_fpr) / (fpr - prev_fpr) : 0.0;
            const double boundary_overlap = prev_overlap + frac * (overlap - prev_overlap);
            area += 0.5 * (prev_overlap + boundary_overlap) * (fpr_max - prev_fpr);
            done = true;
        } else {
            area += 0.5 * (prev_overlap + overlap) * (fpr - prev_fpr);
            prev_fpr = fpr;
            prev_overlap = overlap;
        }
    }
    if (!done) area += prev_overlap * (fpr_max - prev_fpr);  // flat extension, curve exhausted
    return area / fpr_max;
}

std::vector<std::pair<int, double>> purity_curve(const std::vector<std::vector<double>>& points,
                                                 const Labeling& truth,
                                                 const std::vector<int>& cluster_counts) {
    if (points.size() != truth.labels.size())
        throw param_error("purity_curve: points/labels misaligned");
    std::vector<std::pair<int, double>> out;
    for (int count : cluster_counts) {
        const Labeling pred = ward_cluster(points, count);
        const ContingencyTable t = ContingencyTable::from(pred, truth);
        long long majority = 0;
        for (int p = 0; p < t.n_pred; ++p) {
            long long best = 0;
            for (int q = 0; q < t.n_true; ++q) best = std::max(best, t.at(p, q));
            majority += best;
        }
        out.emplace_back(count, static_cast<double>(majority) / static_cast<double>(t.total()));
    }
    return out;
}

LabelGrid segment_pixels(const FeatureMap& new_features, const PixelNet& head,
                         const std::vector<std::vector<double>>& centers,
                         double feature_smooth_sigma, int crop_margin) {
    if (centers.empty()) throw param_error("segment_pixels: no cluster centers");
    const FeatureMap feats = descriptor_features(new_features, feature_smooth_sigma, crop_margin);
    const FeatureMap emb = head_forward(head, feats);
    for (const auto& c : centers)
        if (static_cast<int>(c.size()) != emb.channels)
            throw param_error("segment_pixels: center dimension mismatch");

    LabelGrid out;
    out.height = emb.height;
    out.width = emb.width;
    out.n_clusters = static_cast<int>(centers.size());
    out.labels.resize(static_cast<std::size_t>(emb.height) * emb.width);
    const std::size_t plane = out.labels.size();
    for (std::size_t p = 0; p < plane; ++p) {
        const double* v = emb.data.data() + p * emb.channels;
        int best = 0;
        double bestd = std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < centers.size(); ++c) {
            double d = 0.0;
            for (int i = 0; i < emb.channels; ++i) {
                const double diff = v[i] - centers[c][i];
                d += diff * diff;
            }
            if (d < bestd) {
                bestd = d;
                best = static_cast<int>(c);
            }
        }
        out.labels[p] = best;
    }
    return out;
}

}  // namespace blindcluster
