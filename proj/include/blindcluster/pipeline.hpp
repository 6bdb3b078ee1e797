#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "blindcluster/cluster.hpp"
#include "blindcluster/contrastive.hpp"
#include "blindcluster/corpus.hpp"
#include "blindcluster/localize.hpp"
#include "blindcluster/metrics.hpp"
#include "blindcluster/nets.hpp"

namespace blindcluster {

struct ClusteringConfig {
    std::string method = "ward";  // ward | kmeans
    int n_clusters = 4;           // includes the normal cluster
};

struct PipelinePaths {
    std::string corpus_dir;
    std::string labels_file;  // optional; corpus_dir/labels.csv when empty
    std::string out_dir;
};

struct PipelineConfig {
    PipelinePaths paths;
    FcaConfig fca;
    VaeTrainConfig vae;
    ContrastiveConfig contrastive;
    ClusteringConfig clustering;
    std::uint64_t seed = 1;
    int threads = 1;
    bool quiet = false;
    std::optional<double> threshold_override;

    void validate() const;        // numeric ranges
    void validate_paths() const;  // referenced paths resolvable
};

// Flat key=value text, dotted section prefixes, '#' comments. Unknown keys
// are hard errors.
PipelineConfig parse_config_file(const std::string& path);
PipelineConfig parse_config_text(const std::string& text, const std::string& origin);
std::map<std::string, std::string> config_to_map(const PipelineConfig& config);

struct StageSeeds {
    std::uint64_t vae;
    std::uint64_t threshold;
    std::uint64_t head;
    std::uint64_t cluster;
};
StageSeeds derive_stage_seeds(std::uint64_t seed);

Corpus pipeline_load_corpus(const PipelineConfig& config);
TrainedVae stage_train_vae(const PipelineConfig& config, const Corpus& corpus);
std::vector<AnomalyMap> stage_localize(const PipelineConfig& config, const Corpus& corpus,
                                       const VaeModel& model);
ThresholdEstimate stage_threshold(const PipelineConfig& config, const Corpus& corpus,
                                  const std::vector<AnomalyMap>& maps,
                                  const std::vector<double>& image_scores);
PixelNet stage_train_head(const PipelineConfig& config, const Corpus& corpus,
                          const std::vector<AnomalyMap>& maps, const ThresholdEstimate& thr);

struct ClusterStage {
    std::vector<ImageDescriptor> descriptors;
    Labeling labeling;
    std::vector<std::vector<double>> centers;  // k-means centers for segmentation
};
ClusterStage stage_cluster(const PipelineConfig& config, const Corpus& corpus,
                           const std::vector<AnomalyMap>& maps, const PixelNet& head);

// Ground-truth types compressed to a dense 0-based labeling.
Labeling truth_labeling(const Corpus& corpus);

struct EvalInputs {
    const Labeling* pred = nullptr;
    const Labeling* truth = nullptr;
    const std::vector<AnomalyMap>* maps = nullptr;
    const std::vector<FeatureMap>* masks = nullptr;  // cropped to map extents
    const std::vector<double>* image_scores = nullptr;
    const std::vector<int>* image_anomalous = nullptr;
};
// Keys: nmi, ari, f1, auroc_pixel, auroc_image, pro; undefined metrics are
// listed under "omitted" with a reason.
nlohmann::json evaluate_metrics(const EvalInputs& in);

struct PipelineArtifacts {
    std::vector<std::string> ids;
    TrainedVae vae;
    std::vector<AnomalyMap> maps;
    std::vector<double> image_scores;
    ThresholdEstimate threshold;
    PixelNet head;
    std::vector<ImageDescriptor> descriptors;
    Labeling labeling;
    std::vector<std::vector<double>> centers;
    nlohmann::json metrics;
};

// Full pipeline: load -> train_vae -> localize -> threshold -> train_head ->
// embed -> cluster -> evaluate. Persists every artifact under out_dir and
// writes a run manifest; a stage failure leaves prior artifacts plus a
// FAILED marker in the manifest.
PipelineArtifacts run_pipeline(const PipelineConfig& config);

}  // namespace blindcluster
