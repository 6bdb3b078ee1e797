#include "blindcluster/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;

namespace blindcluster {

bool Corpus::has_labels() const {
    return !items.empty() &&
           std::all_of(items.begin(), items.end(),
                       [](const CorpusItem& it) { return it.gt_type.has_value(); });
}

bool Corpus::has_masks() const {
    return !items.empty() &&
           std::all_of(items.begin(), items.end(),
                       [](const CorpusItem& it) { return it.gt_mask.has_value(); });
}

void Corpus::validate() const {
    if (items.empty()) throw param_error("Corpus: no items");
    const int c = items.front().features.channels;
    for (const auto& it : items) {
        if (it.features.channels != c)
            throw param_error("Corpus: item '" + it.id + "' channel count mismatch");
        if (it.gt_mask) {
            if (it.gt_mask->height != it.features.height ||
                it.gt_mask->width != it.features.width || it.gt_mask->channels != 1)
                throw param_error("Corpus: item '" + it.id + "' mask extent mismatch");
            bool any = false;
            for (double v : it.gt_mask->data) {
                if (v != 0.0 && v != 1.0)
                    throw param_error("Corpus: item '" + it.id + "' mask not binary");
                any = any || v != 0.0;
            }
            if (it.gt_type && (*it.gt_type == 0) != !any)
                throw param_error("Corpus: item '" + it.id + "' label/mask inconsistent");
        }
    }
}

void SyntheticSpec::validate() const {
    if (n_images < 1) throw param_error("SyntheticSpec: n_images must be >= 1");
    if (height < 8 || width < 8) throw param_error("SyntheticSpec: extent too small");
    if (channels < 1) throw param_error("SyntheticSpec: channels must be >= 1");
    if (n_anomaly_types < 1) throw param_error("SyntheticSpec: n_anomaly_types must be >= 1");
    if (!(normal_fraction > 0.0 && normal_fraction <= 1.0))
        throw param_error("SyntheticSpec: normal_fraction must be in (0, 1]");
    if (!(anomaly_area_fraction > 0.0 && anomaly_area_fraction <= 0.25))
        throw param_error("SyntheticSpec: anomaly_area_fraction must be in (0, 0.25]");
    if (!(base_smoothness > 0.0)) throw param_error("SyntheticSpec: base_smoothness must be > 0");
    if (!(perturbation_strength > 0.0))
        throw param_error("SyntheticSpec: perturbation_strength must be > 0");
    if (n_normal_modes < 1) throw param_error("SyntheticSpec: n_normal_modes must be >= 1");
}

// --------------------------------------------------------------------------
// FMAP container
// --------------------------------------------------------------------------

namespace {

void put_u16(std::vector<unsigned char>& buf, std::uint16_t v) {
    buf.push_back(static_cast<unsigned char>(v & 0xff));
    buf.push_back(static_cast<unsigned char>(v >> 8));
}

void put_u32(std::vector<unsigned char>& buf, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xff));
}

std::uint16_t get_u16(const unsigned char* p) {
    return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

std::uint32_t get_u32(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

constexpr std::size_t kFmapHeaderSize = 20;

}  // namespace

FeatureMap load_feature_map(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("load_feature_map: cannot open '" + path + "'");
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                     std::istreambuf_iterator<char>());
    if (bytes.size() < kFmapHeaderSize)
        throw format_error("load_feature_map: '" + path + "': truncated header (file size " +
                           std::to_string(bytes.size()) + " < 20 bytes)");
    if (std::memcmp(bytes.data(), "FMAP", 4) != 0)
        throw format_error("load_feature_map: '" + path + "': bad magic at byte offset 0");
    if (get_u16(bytes.data() + 4) != 1)
        throw format_error("load_feature_map: '" + path +
                           "': unsupported version at byte offset 4");
    const std::uint32_t h = get_u32(bytes.data() + 8);
    const std::uint32_t w = get_u32(bytes.data() + 12);
    const std::uint32_t c = get_u32(bytes.data() + 16);
    if (h == 0 || w == 0 || c == 0)
        throw format_error("load_feature_map: '" + path +
                           "': zero dimension in header at byte offset 8");
    const std::uint64_t count = static_cast<std::uint64_t>(h) * w * c;
    if (count > (1ULL << 31))
        throw format_error("load_feature_map: '" + path +
                           "': dimension overflow in header at byte offset 8");
    const std::uint64_t expected = kFmapHeaderSize + count * 4;
    if (bytes.size() != expected)
        throw format_error("load_feature_map: '" + path + "': payload length mismatch at byte offset " +
                           std::to_string(kFmapHeaderSize) + " (expected " +
                           std::to_string(expected) + " bytes total, got " +
                           std::to_string(bytes.size()) + ")");
    FeatureMap map(static_cast<int>(h), static_cast<int>(w), static_cast<int>(c));
    for (std::uint64_t i = 0; i < count; ++i) {
        const std::uint32_t u = get_u32(bytes.data() + kFmapHeaderSize + i * 4);
        float f;
        std::memcpy(&f, &u, 4);
        map.data[i] = static_cast<double>(f);
    }
    return map;
}

void save_feature_map(const FeatureMap& map, const std::string& path) {
    std::vector<unsigned char> bytes;
    bytes.reserve(kFmapHeaderSize + map.size() * 4);
    bytes.insert(bytes.end(), {'F', 'M', 'A', 'P'});
    put_u16(bytes, 1);
    put_u16(bytes, 0);
    put_u32(bytes, static_cast<std::uint32_t>(map.height));
    put_u32(bytes, static_cast<std::uint32_t>(map.width));
    put_u32(bytes, static_cast<std::uint32_t>(map.channels));
    for (double v : map.data) {
        const float f = static_cast<float>(v);
        std::uint32_t u;
        std::memcpy(&u, &f, 4);
        put_u32(bytes, u);
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw io_error("save_feature_map: cannot open '" + path + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw io_error("save_feature_map: write failed for '" + path + "'");
}

// --------------------------------------------------------------------------
// Classical filter-bank features
// --------------------------------------------------------------------------

FeatureMap extract_classical_features(const FeatureMap& gray,
                                      const std::vector<double>& scales) {
    if (gray.channels != 1) throw param_error("extract_classical_features: input must have C=1");
    if (gray.size() == 0) throw param_error("extract_classical_features: empty image");
    if (scales.empty()) throw param_error("extract_classical_features: no scales given");
    const int h = gray.height, w = gray.width;
    FeatureMap out(h, w, static_cast<int>(scales.size()) * 4);
    for (std::size_t si = 0; si < scales.size(); ++si) {
        const FeatureMap g = gaussian_smooth(gray, scales[si]);
        const int c0 = static_cast<int>(si) * 4;
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                const auto v = [&](int yy, int xx) {
                    return g.at(std::clamp(yy, 0, h - 1), std::clamp(xx, 0, w - 1), 0);
                };
                out.at(y, x, c0 + 0) = v(y, x);
                out.at(y, x, c0 + 1) = 0.5 * (v(y, x + 1) - v(y, x - 1));
                out.at(y, x, c0 + 2) = 0.5 * (v(y + 1, x) - v(y - 1, x));
                out.at(y, x, c0 + 3) =
                    v(y - 1, x) + v(y + 1, x) + v(y, x - 1) + v(y, x + 1) - 4.0 * v(y, x);
            }
        }
    }
    return out;
}

// --------------------------------------------------------------------------
// Synthetic corpus generator
// --------------------------------------------------------------------------

namespace {

// Smoothed iid noise, re-standardized to zero mean / unit variance so the
// field's amplitude does not depend on the smoothing scale.
FeatureMap correlated_unit_field(int h, int w, int c, double sigma, RngState& rng) {
    FeatureMap f(h, w, c);
    for (double& v : f.data) v = rng.normal();
    f = gaussian_smooth(f, sigma);
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    for (int ch = 0; ch < c; ++ch) {
        double sum = 0.0, sq = 0.0;
        for (std::size_t p = 0; p < plane; ++p) {
            const double v = f.data[p * c + ch];
            sum += v;
            sq += v * v;
        }
        const double mean = sum / static_cast<double>(plane);
        const double var = sq / static_cast<double>(plane) - mean * mean;
        const double sd = var > 0.0 ? std::sqrt(var) : 1.0;
        for (std::size_t p = 0; p < plane; ++p)
            f.data[p * c + ch] = (f.data[p * c + ch] - mean) / sd;
    }
    return f;
}

// Per-mode channel mean profile. The base pattern alternates sign so that a
// channel rotation produces a detectable, type-specific mean change; modes
// beyond the first add a half-split offset so the normal class is multimodal.
double mode_mean(const SyntheticSpec& spec, int mode, int channel) {
    const double p = spec.perturbation_strength;
    const double base = (channel % 2 == 0 ? 0.5 : -0.5) * p;
    if (mode == 0) return base;
    const double off = (channel < spec.channels / 2 ? 1.0 : -1.0) * p * mode;
    return base + off;
}

struct Ellipse {
    double cy, cx, a, b, theta;
    bool contains(int y, int x) const {
        const double dy = y - cy, dx = x - cx;
        const double ct = std::cos(theta), st = std::sin(theta);
        const double u = (dx * ct + dy * st) / a;
        const double v = (-dx * st + dy * ct) / b;
        return u * u + v * v <= 1.0;
    }
};

}  // namespace

Corpus gen_synthetic_corpus(const SyntheticSpec& spec, RngState& rng) {
    spec.validate();
    const int n = spec.n_images;
    const int n_normal = static_cast<int>(std::floor(spec.normal_fraction * n));
    const int h = spec.height, w = spec.width, c = spec.channels;
    const double p = spec.perturbation_strength;

    Corpus corpus;
    corpus.name = "synthetic";
    corpus.items.reserve(n);

    for (int i = 0; i < n; ++i) {
        const bool anomalous = i >= n_normal;
        const int type = anomalous ? 1 + (i - n_normal) % spec.n_anomaly_types : 0;
        const int mode = i % spec.n_normal_modes;

        const FeatureMap z = correlated_unit_field(h, w, c, spec.base_smoothness, rng);

        // per-pixel per-channel mean field; multimodal corpora blend in
        // patches of the next mode so the normal class is spatially complex
        FeatureMap mean_field(h, w, c);
        if (spec.n_normal_modes == 1) {
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x)
                    for (int ch = 0; ch < c; ++ch)
                        mean_field.at(y, x, ch) = mode_mean(spec, 0, ch);
        } else {
            const FeatureMap phi = correlated_unit_field(h, w, 1, 4.0, rng);
            const int next = (mode + 1) % spec.n_normal_modes;
            for (int y = 0; y < h; ++y) {
                for (int x = 0; x < w; ++x) {
                    // ~20% of the area belongs to the minority mode
                    const double blend = 1.0 / (1.0 + std::exp(-(phi.at(y, x, 0) - 0.84) / 0.25));
                    for (int ch = 0; ch < c; ++ch)
                        mean_field.at(y, x, ch) = (1.0 - blend) * mode_mean(spec, mode, ch) +
                                                  blend * mode_mean(spec, next, ch);
                }
            }
        }

        CorpusItem item;
        {
            std::ostringstream oss;
            oss << "img_";
            oss.width(3);
            oss.fill('0');
            oss << i;
            item.id = oss.str();
        }
        item.features = FeatureMap(h, w, c);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                for (int ch = 0; ch < c; ++ch)
                    item.features.at(y, x, ch) = mean_field.at(y, x, ch) + z.at(y, x, ch);

        FeatureMap mask(h, w, 1, 0.0);
        if (anomalous) {
            const double area = spec.anomaly_area_fraction * h * w;
            const double aspect = 0.6 + 0.4 * rng.uniform01();
            const double b = std::sqrt(area * aspect / M_PI);
            const double a = b / aspect;
            const double theta = M_PI * rng.uniform01();
            // keep the region clear of the border crop applied downstream
            int margin = std::min(18, static_cast<int>(std::floor(std::min(h, w) / 2.0 - a - 1.0)));
            margin = std::max(margin, 0);
            const int lo_y = margin, hi_y = h - margin, lo_x = margin, hi_x = w - margin;
            if (hi_y <= lo_y || hi_x <= lo_x)
                throw param_error("gen_synthetic_corpus: anomaly region does not fit the extent");
            Ellipse e;
            e.cy = lo_y + rng.uniform01() * (hi_y - lo_y);
            e.cx = lo_x + rng.uniform01() * (hi_x - lo_x);
            e.a = a;
            e.b = b;
            e.theta = theta;

            const int family = (type - 1) % 3;
            const int cycle = (type - 1) / 3;
            const double mag = p * (1.0 + 0.5 * cycle);
            const int rot = (1 + 2 * cycle) % c;  // odd shift, stays detectable

            for (int y = 0; y < h; ++y) {
                for (int x = 0; x < w; ++x) {
                    if (!e.contains(y, x)) continue;
                    mask.at(y, x, 0) = 1.0;
                    if (family == 0) {
                        for (int ch = 0; ch < c; ++ch) item.features.at(y, x, ch) += mag;
                    } else if (family == 1) {
                        for (int ch = 0; ch < c; ++ch) {
                            const double m = mean_field.at(y, x, ch);
                            item.features.at(y, x, ch) =
                                m + (1.0 + mag) * (item.features.at(y, x, ch) - m);
                        }
                    } else {
                        std::vector<double> orig(c);
                        for (int ch = 0; ch < c; ++ch) orig[ch] = item.features.at(y, x, ch);
                        for (int ch = 0; ch < c; ++ch)
                            item.features.at(y, x, ch) = orig[(ch + rot) % c];
                    }
                }
            }
        }
        item.gt_mask = std::move(mask);
        item.gt_type = type;
        corpus.items.push_back(std::move(item));
    }
    corpus.validate();
    return corpus;
}

// --------------------------------------------------------------------------
// Corpus directory I/O
// --------------------------------------------------------------------------

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur += ch;
        }
    }
    out.push_back(cur);
    return out;
}

}  // namespace

Corpus load_corpus_dir(const std::string& dir) {
    if (!fs::is_directory(dir)) throw io_error("load_corpus_dir: '" + dir + "' is not a directory");
    Corpus corpus;
    corpus.name = fs::path(dir).filename().string();

    std::vector<std::pair<std::string, std::optional<int>>> entries;
    const fs::path labels = fs::path(dir) / "labels.csv";
    if (fs::exists(labels)) {
        std::ifstream in(labels);
        if (!in) throw io_error("load_corpus_dir: cannot open '" + labels.string() + "'");
        std::string line;
        if (!std::getline(in, line) || split_csv_line(line) != std::vector<std::string>{"id", "gt_type"})
            throw format_error("load_corpus_dir: labels.csv must start with header 'id,gt_type'");
        while (std::getline(in, line)) {
            if (line.empty() || line == "\r") continue;
            const auto fields = split_csv_line(line);
            if (fields.size() != 2)
                throw format_error("load_corpus_dir: malformed labels.csv row '" + line + "'");
            int t;
            try {
                t = std::stoi(fields[1]);
            } catch (const std::exception&) {
                throw format_error("load_corpus_dir: bad gt_type in row '" + line + "'");
            }
            if (t < 0) throw format_error("load_corpus_dir: negative gt_type in row '" + line + "'");
            entries.emplace_back(fields[0], t);
        }
    } else {
        std::vector<std::string> ids;
        for (const auto& e : fs::directory_iterator(dir)) {
            const std::string name = e.path().filename().string();
            if (name.size() > 5 && name.substr(name.size() - 5) == ".fmap" &&
                name.find(".mask.fmap") == std::string::npos)
                ids.push_back(name.substr(0, name.size() - 5));
        }
        std::sort(ids.begin(), ids.end());
        for (auto& id : ids) entries.emplace_back(id, std::nullopt);
    }
    if (entries.empty()) throw io_error("load_corpus_dir: no items found in '" + dir + "'");

    for (auto& [id, label] : entries) {
        CorpusItem item;
        item.id = id;
        item.features = load_feature_map((fs::path(dir) / (id + ".fmap")).string());
        const fs::path mask_path = fs::path(dir) / (id + ".mask.fmap");
        if (fs::exists(mask_path)) item.gt_mask = load_feature_map(mask_path.string());
        item.gt_type = label;
        corpus.items.push_back(std::move(item));
    }
    corpus.validate();
    return corpus;
}

void save_corpus_dir(const Corpus& corpus, const std::string& dir) {
    fs::create_directories(dir);
    for (const auto& item : corpus.items) {
        save_feature_map(item.features, (fs::path(dir) / (item.id + ".fmap")).string());
        if (item.gt_mask)
            save_feature_map(*item.gt_mask, (fs::path(dir) / (item.id + ".mask.fmap")).string());
    }
    if (corpus.has_labels()) {
        std::ofstream out(fs::path(dir) / "labels.csv", std::ios::trunc);
        if (!out) throw io_error("save_corpus_dir: cannot write labels.csv");
        out << "id,gt_type\n";
        for (const auto& item : corpus.items) out << item.id << "," << *item.gt_type << "\n";
    }
}

// --------------------------------------------------------------------------
// PGM rendering
// --------------------------------------------------------------------------

void write_pgm(const AnomalyMap& map, const std::string& path) {
    double lo = map.scores[0], hi = map.scores[0];
    for (double v : map.scores) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    const double range = hi > lo ? hi - lo : 1.0;
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw io_error("write_pgm: cannot open '" + path + "'");
    out << "P5\n" << map.width << " " << map.height << "\n255\n";
    for (double v : map.scores) {
        const int g = static_cast<int>(std::lround(255.0 * (v - lo) / range));
        out.put(static_cast<char>(std::clamp(g, 0, 255)));
    }
    if (!out) throw io_error("write_pgm: write failed for '" + path + "'");
}

void write_label_pgm(const std::vector<int>& labels, int height, int width, int n_clusters,
                     const std::string& path) {
    if (static_cast<std::size_t>(height) * width != labels.size())
        throw param_error("write_label_pgm: extent mismatch");
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw io_error("write_label_pgm: cannot open '" + path + "'");
    out << "P5\n" << width << " " << height << "\n255\n";
    for (int l : labels) {
        const int g = n_clusters > 1 ? l * 255 / (n_clusters - 1) : 0;
        out.put(static_cast<char>(std::clamp(g, 0, 255)));
    }
    if (!out) throw io_error("write_label_pgm: write failed for '" + path + "'");
}

}  // namespace blindcluster
