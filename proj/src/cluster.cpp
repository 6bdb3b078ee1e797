#include "blindcluster/cluster.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "blindcluster/common.hpp"

namespace blindcluster {

namespace {

double sq_dist(const std::vector<double>& a, const std::vector<double>& b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        acc += d * d;
    }
    return acc;
}

void validate_points(const std::vector<std::vector<double>>& points, int n_clusters) {
    if (points.empty()) throw param_error("clustering: no points");
    if (n_clusters < 1) throw param_error("clustering: n_clusters must be >= 1");
    if (n_clusters > static_cast<int>(points.size()))
        throw param_error("clustering: n_clusters exceeds the number of points");
    const std::size_t dim = points.front().size();
    if (dim == 0) throw param_error("clustering: zero-dimensional points");
    for (const auto& p : points)
        if (p.size() != dim) throw param_error("clustering: inconsistent point dimensions");
}

// first-occurrence relabeling so output labels are deterministic
Labeling compact_labels(const std::vector<int>& raw, int n_clusters) {
    Labeling out;
    out.n_clusters = n_clusters;
    out.labels.resize(raw.size());
    std::vector<int> remap;
    for (std::size_t i = 0; i < raw.size(); ++i) {
        int found = -1;
        for (std::size_t r = 0; r < remap.size(); ++r)
            if (remap[r] == raw[i]) {
                found = static_cast<int>(r);
                break;
            }
        if (found < 0) {
            found = static_cast<int>(remap.size());
            remap.push_back(raw[i]);
        }
        out.labels[i] = found;
    }
    return out;
}

}  // namespace

Labeling ward_cluster(const std::vector<std::vector<double>>& points, int n_clusters) {
    validate_points(points, n_clusters);
    const int n = static_cast<int>(points.size());

    // Lance-Williams on squared Euclidean distances; merge cost stays
    // proportional to the Ward variance increase throughout.
    std::vector<double> dist(static_cast<std::size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
            const double d = sq_dist(points[i], points[j]);
            dist[static_cast<std::size_t>(i) * n + j] = d;
            dist[static_cast<std::size_t>(j) * n + i] = d;
        }

    std::vector<bool> active(n, true);
    std::vector<double> size(n, 1.0);
    std::vector<int> slot(n);
    for (int i = 0; i < n; ++i) slot[i] = i;

    for (int merges = 0; merges < n - n_clusters; ++merges) {
        int bi = -1, bj = -1;
        double best = std::numeric_limits<double>::infinity();
        for (int i = 0; i < n; ++i) {
            if (!active[i]) continue;
            for (int j = i + 1; j < n; ++j) {
                if (!active[j]) continue;
                const double d = dist[static_cast<std::size_t>(i) * n + j];
                if (d < best) {
                    best = d;
                    bi = i;
                    bj = j;
                }
            }
        }
        const double ni = size[bi], nj = size[bj], dij = best;
        for (int m = 0; m < n; ++m) {
            if (!active[m] || m == bi || m == bj) continue;
            const double nm = size[m];
            const double dim = dist[static_cast<std::size_t>(bi) * n + m];
            const double djm = dist[static_cast<std::size_t>(bj) * n + m];
            const double d =
                ((ni + nm) * dim + (nj + nm) * djm - nm * dij) / (ni + nj + nm);
            dist[static_cast<std::size_t>(bi) * n + m] = d;
            dist[static_cast<std::size_t>(m) * n + bi] = d;
        }
        size[bi] += size[bj];
        active[bj] = false;
        for (int i = 0; i < n; ++i)
            if (slot[i] == bj) slot[i] = bi;
    }
    return compact_labels(slot, n_clusters);
}

KmeansResult kmeans(const std::vector<std::vector<double>>& points, int n_clusters,
                    RngState& rng, int n_init, int max_iter) {
    validate_points(points, n_clusters);
    if (n_init < 1 || max_iter < 1) throw param_error("kmeans: n_init/max_iter must be >= 1");
    const int n = static_cast<int>(points.size());
    const int k = n_clusters;

    KmeansResult best;
    best.wcss = std::numeric_limits<double>::infinity();

    for (int init = 0; init < n_init; ++init) {
        // k-means++ seeding
        std::vector<std::vector<double>> centers;
        centers.reserve(k);
        centers.push_back(points[rng.uniform_below(static_cast<std::uint64_t>(n))]);
        std::vector<double> d2(n);
        for (int i = 0; i < n; ++i) d2[i] = sq_dist(points[i], centers[0]);
        while (static_cast<int>(centers.size()) < k) {
            double total = 0.0;
            for (double d : d2) total += d;
            int pick;
            if (total <= 0.0) {
                pick = static_cast<int>(rng.uniform_below(static_cast<std::uint64_t>(n)));
            } else {
                const double r = rng.uniform01() * total;
                double acc = 0.0;
                pick = n - 1;
                for (int i = 0; i < n; ++i) {
                    acc += d2[i];
                    if (acc > r) {
                        pick = i;
                        break;
                    }
                }
            }
            centers.push_back(points[pick]);
            for (int i = 0; i < n; ++i)
                d2[i] = std::min(d2[i], sq_dist(points[i], centers.back()));
        }

        std::vector<int> assign(n, -1);
        for (int iter = 0; iter < max_iter; ++iter) {
            bool changed = false;
            for (int i = 0; i < n; ++i) {
                int bestc = 0;
                double bestd = sq_dist(points[i], centers[0]);
                for (int cdx = 1; cdx < k; ++cdx) {
                    const double d = sq_dist(points[i], centers[cdx]);
                    if (d < bestd) {
                        bestd = d;
                        bestc = cdx;
                    }
                }
                if (assign[i] != bestc) {
                    assign[i] = bestc;
                    changed = true;
                }
            }
            if (!changed) break;

            const std::size_t dim = points.front().size();
            std::vector<int> count(k, 0);
            for (auto& cvec : centers) std::fill(cvec.begin(), cvec.end(), 0.0);
            for (int i = 0; i < n; ++i) {
                count[assign[i]] += 1;
                for (std::size_t d = 0; d < dim; ++d) centers[assign[i]][d] += points[i][d];
            }
            std::vector<double> pdist(n);
            bool need_pdist = false;
            for (int cdx = 0; cdx < k; ++cdx) {
                if (count[cdx] > 0) {
                    for (std::size_t d = 0; d < dim; ++d) centers[cdx][d] /= count[cdx];
                } else {
                    if (!need_pdist) {
                        for (int i = 0; i < n; ++i) pdist[i] = sq_dist(points[i], centers[assign[i]]);
                        need_pdist = true;
                    }
                    // re-seed to the point farthest from its center
                    int far = 0;
                    for (int i = 1; i < n; ++i)
                        if (pdist[i] > pdist[far]) far = i;
                    centers[cdx] = points[far];
                    pdist[far] = 0.0;
                }
            }
        }

        double wcss = 0.0;
        for (int i = 0; i < n; ++i) wcss += sq_dist(points[i], centers[assign[i]]);
        if (wcss < best.wcss) {
            best.wcss = wcss;
            best.centers = centers;
            best.labeling.labels = assign;
            best.labeling.n_clusters = k;
        }
    }
    return best;
}

void save_labeling_csv(const Labeling& labeling, const std::vector<std::string>& ids,
                       const std::string& path) {
    if (labeling.labels.size() != ids.size())
        throw param_error("save_labeling_csv: ids/labels size mismatch");
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw io_error("save_labeling_csv: cannot open '" + path + "'");
    out << "id,label\n";
    for (std::size_t i = 0; i < ids.size(); ++i) out << ids[i] << "," << labeling.labels[i] << "\n";
    if (!out) throw io_error("save_labeling_csv: write failed for '" + path + "'");
}

void save_centers_csv(const std::vector<std::vector<double>>& centers, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw io_error("save_centers_csv: cannot open '" + path + "'");
    const std::size_t dim = centers.empty() ? 0 : centers.front().size();
    out << "d_0";
    for (std::size_t d = 1; d < dim; ++d) out << ",d_" << d;
    out << "\n";
    char buf[32];
    for (const auto& c : centers) {
        for (std::size_t d = 0; d < c.size(); ++d) {
            std::snprintf(buf, sizeof(buf), "%.17g", c[d]);
            out << (d ? "," : "") << buf;
        }
        out << "\n";
    }
    if (!out) throw io_error("save_centers_csv: write failed for '" + path + "'");
}

std::vector<std::vector<double>> load_centers_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw io_error("load_centers_csv: cannot open '" + path + "'");
    std::string line;
    if (!std::getline(in, line) || line.rfind("d_0", 0) != 0)
        throw format_error("load_centers_csv: missing header in '" + path + "'");
    std::vector<std::vector<double>> out;
    while (std::getline(in, line)) {
        if (line.empty() || line == "\r") continue;
        std::vector<double> row;
        std::stringstream ss(line);
        std::string field;
        while (std::getline(ss, field, ',')) {
            if (!field.empty() && field.back() == '\r') field.pop_back();
            try {
                row.push_back(std::stod(field));
            } catch (const std::exception&) {
                throw format_error("load_centers_csv: bad value '" + field + "' in '" + path + "'");
            }
        }
        out.push_back(std::move(row));
    }
    return out;
}

Labeling load_labeling_csv(const std::string& path, std::vector<std::string>* ids) {
    std::ifstream in(path);
    if (!in) throw io_error("load_labeling_csv: cannot open '" + path + "'");
    std::string line;
    if (!std::getline(in, line) || (line != "id,label" && line != "id,label\r"))
        throw format_error("load_labeling_csv: missing 'id,label' header in '" + path + "'");
    Labeling out;
    while (std::getline(in, line)) {
        if (line.empty() || line == "\r") continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos)
            throw format_error("load_labeling_csv: malformed row '" + line + "'");
        std::string value = line.substr(comma + 1);
        if (!value.empty() && value.back() == '\r') value.pop_back();
        int label;
        try {
            label = std::stoi(value);
        } catch (const std::exception&) {
            throw format_error("load_labeling_csv: bad label in row '" + line + "'");
        }
        if (label < 0) throw format_error("load_labeling_csv: negative label in row '" + line + "'");
        if (ids) ids->push_back(line.substr(0, comma));
        out.labels.push_back(label);
        out.n_clusters = std::max(out.n_clusters, label + 1);
    }
    return out;
}

}  // namespace blindcluster
