#pragma once

#include <optional>
#include <string>
#include <vector>

#include "blindcluster/rng.hpp"
#include "blindcluster/tensor.hpp"

namespace blindcluster {

struct CorpusItem {
    std::string id;
    FeatureMap features;
    std::optional<FeatureMap> gt_mask;  // C = 1, values in {0, 1}; evaluation only
    std::optional<int> gt_type;         // 0 = normal, >= 1 anomaly type; evaluation only
};

struct Corpus {
    std::string name;
    std::vector<CorpusItem> items;

    int channels() const { return items.empty() ? 0 : items.front().features.channels; }
    bool has_labels() const;
    bool has_masks() const;
    void validate() const;  // shared channel count, mask extents, label consistency
};

struct SyntheticSpec {
    int n_images = 64;
    int height = 48;
    int width = 48;
    int channels = 8;
    int n_anomaly_types = 3;
    double normal_fraction = 0.25;
    double anomaly_area_fraction = 0.05;
    double base_smoothness = 1.5;
    double perturbation_strength = 3.0;
    int n_normal_modes = 1;

    void validate() const;  // throws param_error
};

// FMAP container: "FMAP", u16 version=1, u16 reserved=0, u32 H, u32 W, u32 C
// (little-endian), then H*W*C IEEE-754 f32, row-major (y, x, c).
FeatureMap load_feature_map(const std::string& path);
void save_feature_map(const FeatureMap& map, const std::string& path);

// Classical filter-bank features on a grayscale grid in [0,1] (C = 1 map):
// per scale, 4 channels: smoothed intensity, x/y central derivatives,
// Laplacian of the smoothed intensity.
FeatureMap extract_classical_features(const FeatureMap& gray,
                                      const std::vector<double>& scales);

Corpus gen_synthetic_corpus(const SyntheticSpec& spec, RngState& rng);

// Corpus directory: <id>.fmap per item, optional <id>.mask.fmap, optional
// labels.csv with header "id,gt_type" (row order defines item order).
Corpus load_corpus_dir(const std::string& dir);
void save_corpus_dir(const Corpus& corpus, const std::string& dir);

// 8-bit binary PGM, min-max scaled; for human inspection of anomaly maps.
void write_pgm(const AnomalyMap& map, const std::string& path);
// Label grid rendered with evenly spaced gray levels.
void write_label_pgm(const std::vector<int>& labels, int height, int width,
                     int n_clusters, const std::string& path);

}  // namespace blindcluster
