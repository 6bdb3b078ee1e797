#include "blindcluster/pipeline.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using nlohmann::json;

namespace blindcluster {

namespace {

constexpr const char* kVersion = "0.1.0";

std::string fmt_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    std::size_t b = s.find_last_not_of(" \t\r");
    return a == std::string::npos ? "" : s.substr(a, b - a + 1);
}

double parse_double(const std::string& key, const std::string& value) {
    try {
        std::size_t pos;
        const double v = std::stod(value, &pos);
        if (pos != value.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const std::exception&) {
        throw param_error("config: bad numeric value '" + value + "' for key '" + key + "'");
    }
}

long long parse_int(const std::string& key, const std::string& value) {
    try {
        std::size_t pos;
        const long long v = std::stoll(value, &pos);
        if (pos != value.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const std::exception&) {
        throw param_error("config: bad integer value '" + value + "' for key '" + key + "'");
    }
}

std::uint64_t parse_u64(const std::string& key, const std::string& value) {
    try {
        std::size_t pos;
        const unsigned long long v = std::stoull(value, &pos);
        if (pos != value.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const std::exception&) {
        throw param_error("config: bad unsigned value '" + value + "' for key '" + key + "'");
    }
}

}  // namespace

void PipelineConfig::validate() const {
    fca.validate();
    if (vae.iterations < 0 || vae.batch_size < 1 || vae.latent_dim < 1 || !(vae.lr > 0.0) ||
        !(vae.weight_decay >= 0.0))
        throw param_error("config: bad vae section");
    contrastive.validate();
    if (clustering.method != "ward" && clustering.method != "kmeans")
        throw param_error("config: clustering.method must be 'ward' or 'kmeans'");
    if (clustering.n_clusters < 1) throw param_error("config: clustering.n_clusters must be >= 1");
    if (threads < 1) throw param_error("config: threads must be >= 1");
}

void PipelineConfig::validate_paths() const {
    if (paths.corpus_dir.empty()) throw param_error("config: paths.corpus_dir is required");
    if (!fs::is_directory(paths.corpus_dir))
        throw param_error("config: corpus dir '" + paths.corpus_dir + "' does not exist");
    if (!paths.labels_file.empty() && !fs::exists(paths.labels_file))
        throw param_error("config: labels file '" + paths.labels_file + "' does not exist");
    if (paths.out_dir.empty()) throw param_error("config: paths.out_dir is required");
}

PipelineConfig parse_config_text(const std::string& text, const std::string& origin) {
    PipelineConfig cfg;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw param_error("config: " + origin + ":" + std::to_string(lineno) +
                              ": expected 'key = value'");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));

        if (key == "paths.corpus_dir") cfg.paths.corpus_dir = value;
        else if (key == "paths.labels_file") cfg.paths.labels_file = value;
        else if (key == "paths.out_dir") cfg.paths.out_dir = value;
        else if (key == "fca.sigma_p") cfg.fca.sigma_p = parse_double(key, value);
        else if (key == "fca.sigma_s") cfg.fca.sigma_s = parse_double(key, value);
        else if (key == "fca.border_margin") cfg.fca.border_margin = static_cast<int>(parse_int(key, value));
        else if (key == "vae.iterations") cfg.vae.iterations = static_cast<int>(parse_int(key, value));
        else if (key == "vae.lr") cfg.vae.lr = parse_double(key, value);
        else if (key == "vae.weight_decay") cfg.vae.weight_decay = parse_double(key, value);
        else if (key == "vae.latent_dim") cfg.vae.latent_dim = static_cast<int>(parse_int(key, value));
        else if (key == "vae.batch_size") cfg.vae.batch_size = static_cast<int>(parse_int(key, value));
        else if (key == "contrastive.tau") cfg.contrastive.tau = parse_double(key, value);
        else if (key == "contrastive.k") cfg.contrastive.k = static_cast<int>(parse_int(key, value));
        else if (key == "contrastive.margin") cfg.contrastive.margin = parse_double(key, value);
        else if (key == "contrastive.epochs") cfg.contrastive.epochs = static_cast<int>(parse_int(key, value));
        else if (key == "contrastive.lr") cfg.contrastive.lr = parse_double(key, value);
        else if (key == "contrastive.weight_decay") cfg.contrastive.weight_decay = parse_double(key, value);
        else if (key == "contrastive.pairs_per_batch") cfg.contrastive.pairs_per_batch = static_cast<int>(parse_int(key, value));
        else if (key == "contrastive.feature_smooth_sigma") cfg.contrastive.feature_smooth_sigma = parse_double(key, value);
        else if (key == "clustering.method") cfg.clustering.method = value;
        else if (key == "clustering.n_clusters") cfg.clustering.n_clusters = static_cast<int>(parse_int(key, value));
        else if (key == "seed") cfg.seed = parse_u64(key, value);
        else if (key == "threads") cfg.threads = static_cast<int>(parse_int(key, value));
        else if (key == "threshold_override") cfg.threshold_override = parse_double(key, value);
        else
            throw param_error("config: " + origin + ":" + std::to_string(lineno) +
                              ": unknown key '" + key + "'");
    }
    cfg.validate();
    return cfg;
}

PipelineConfig parse_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw io_error("config: cannot open '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str(), fs::path(path).filename().string());
}

std::map<std::string, std::string> config_to_map(const PipelineConfig& c) {
    std::map<std::string, std::string> m;
    m["paths.corpus_dir"] = c.paths.corpus_dir;
    m["paths.labels_file"] = c.paths.labels_file;
    m["paths.out_dir"] = c.paths.out_dir;
    m["fca.sigma_p"] = fmt_double(c.fca.sigma_p);
    m["fca.sigma_s"] = fmt_double(c.fca.sigma_s);
    m["fca.border_margin"] = std::to_string(c.fca.border_margin);
    m["vae.iterations"] = std::to_string(c.vae.iterations);
    m["vae.lr"] = fmt_double(c.vae.lr);
    m["vae.weight_decay"] = fmt_double(c.vae.weight_decay);
    m["vae.latent_dim"] = std::to_string(c.vae.latent_dim);
    m["vae.batch_size"] = std::to_string(c.vae.batch_size);
    m["contrastive.tau"] = fmt_double(c.contrastive.tau);
    m["contrastive.k"] = std::to_string(c.contrastive.k);
    m["contrastive.margin"] = fmt_double(c.contrastive.margin);
    m["contrastive.epochs"] = std::to_string(c.contrastive.epochs);
    m["contrastive.lr"] = fmt_double(c.contrastive.lr);
    m["contrastive.weight_decay"] = fmt_double(c.contrastive.weight_decay);
    m["contrastive.pairs_per_batch"] = std::to_string(c.contrastive.pairs_per_batch);
    m["contrastive.feature_smooth_sigma"] = fmt_double(c.contrastive.feature_smooth_sigma);
    m["clustering.method"] = c.clustering.method;
    m["clustering.n_clusters"] = std::to_string(c.clustering.n_clusters);
    m["seed"] = std::to_string(c.seed);
    m["threads"] = std::to_string(c.threads);
    if (c.threshold_override) m["threshold_override"] = fmt_double(*c.threshold_override);
    return m;
}

StageSeeds derive_stage_seeds(std::uint64_t seed) {
    RngState root(seed);
    StageSeeds s{};
    s.vae = root.next_u64();
    s.threshold = root.next_u64();
    s.head = root.next_u64();
    s.cluster = root.next_u64();
    return s;
}

namespace {

void attach_labels_file(Corpus& corpus, const std::string& labels_file) {
    std::ifstream in(labels_file);
    if (!in) throw io_error("cannot open labels file '" + labels_file + "'");
    std::string line;
    if (!std::getline(in, line))
        throw format_error("labels file '" + labels_file + "': empty");
    std::map<std::string, int> by_id;
    while (std::getline(in, line)) {
        if (line.empty() || line == "\r") continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos)
            throw format_error("labels file: malformed row '" + line + "'");
        std::string v = line.substr(comma + 1);
        if (!v.empty() && v.back() == '\r') v.pop_back();
        int t;
        try {
            t = std::stoi(v);
        } catch (const std::exception&) {
            throw format_error("labels file: bad gt_type in row '" + line + "'");
        }
        by_id[line.substr(0, comma)] = t;
    }
    for (auto& item : corpus.items) {
        const auto it = by_id.find(item.id);
        if (it != by_id.end()) item.gt_type = it->second;
    }
}

}  // namespace

Corpus pipeline_load_corpus(const PipelineConfig& config) {
    Corpus corpus = load_corpus_dir(config.paths.corpus_dir);
    if (!config.paths.labels_file.empty()) attach_labels_file(corpus, config.paths.labels_file);
    return corpus;
}

TrainedVae stage_train_vae(const PipelineConfig& config, const Corpus& corpus) {
    long long n_pixels = 0;
    for (const auto& item : corpus.items)
        n_pixels += static_cast<long long>(item.features.height) * item.features.width;
    Batch pixels(static_cast<int>(n_pixels), corpus.channels());
    int row = 0;
    for (const auto& item : corpus.items) {
        const FeatureMap rescaled = minmax_rescale(item.features);
        const std::size_t plane = static_cast<std::size_t>(rescaled.height) * rescaled.width;
        for (std::size_t p = 0; p < plane; ++p) {
            std::copy(rescaled.data.begin() + p * rescaled.channels,
                      rescaled.data.begin() + (p + 1) * rescaled.channels, pixels.row(row));
            ++row;
        }
    }
    RngState rng(derive_stage_seeds(config.seed).vae);
    return train_vae(pixels, config.vae, rng);
}

std::vector<AnomalyMap> stage_localize(const PipelineConfig& config, const Corpus& corpus,
                                       const VaeModel& model) {
    return localize(corpus, model, config.fca, config.threads);
}

ThresholdEstimate stage_threshold(const PipelineConfig& config, const Corpus& corpus,
                                  const std::vector<AnomalyMap>& maps,
                                  const std::vector<double>& image_scores) {
    if (config.threshold_override) {
        ThresholdEstimate est;
        est.t = *config.threshold_override;
        est.normal_ratio = 0.0;
        est.normal_cluster_index = -1;
        return est;
    }
    const auto descriptors = raw_descriptors(corpus, maps, config.contrastive);
    RngState rng(derive_stage_seeds(config.seed).threshold);
    return estimate_threshold(descriptors, image_scores, config.clustering.n_clusters, rng);
}

PixelNet stage_train_head(const PipelineConfig& config, const Corpus& corpus,
                          const std::vector<AnomalyMap>& maps, const ThresholdEstimate& thr) {
    RngState rng(derive_stage_seeds(config.seed).head);
    return train_head(corpus, maps, thr, config.contrastive, rng);
}

ClusterStage stage_cluster(const PipelineConfig& config, const Corpus& corpus,
                           const std::vector<AnomalyMap>& maps, const PixelNet& head) {
    ClusterStage out;
    out.descriptors = embed_descriptors(corpus, maps, head, config.contrastive);
    std::vector<std::vector<double>> points(out.descriptors.size());
    for (std::size_t i = 0; i < out.descriptors.size(); ++i) points[i] = out.descriptors[i].values;

    RngState rng(derive_stage_seeds(config.seed).cluster);
    const KmeansResult km = kmeans(points, config.clustering.n_clusters, rng);
    if (config.clustering.method == "kmeans") {
        out.labeling = km.labeling;
    } else {
        out.labeling = ward_cluster(points, config.clustering.n_clusters);
    }
    out.centers = km.centers;
    return out;
}

Labeling truth_labeling(const Corpus& corpus) {
    if (!corpus.has_labels()) throw param_error("truth_labeling: corpus has no labels");
    std::vector<int> uniq;
    for (const auto& item : corpus.items) uniq.push_back(*item.gt_type);
    std::sort(uniq.begin(), uniq.end());
    uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
    Labeling out;
    out.n_clusters = static_cast<int>(uniq.size());
    for (const auto& item : corpus.items)
        out.labels.push_back(static_cast<int>(
            std::lower_bound(uniq.begin(), uniq.end(), *item.gt_type) - uniq.begin()));
    return out;
}

nlohmann::json evaluate_metrics(const EvalInputs& in) {
    json metrics = json::object();
    json omitted = json::object();

    if (in.pred && in.truth) {
        metrics["nmi"] = nmi(*in.pred, *in.truth);
        metrics["ari"] = ari(*in.pred, *in.truth);
        metrics["f1"] = f1_assignment(*in.pred, *in.truth);
    } else {
        omitted["nmi"] = "no ground-truth labels";
        omitted["ari"] = "no ground-truth labels";
        omitted["f1"] = "no ground-truth labels";
    }

    if (in.maps && in.masks && !in.maps->empty()) {
        std::vector<double> scores;
        std::vector<int> labels;
        for (std::size_t i = 0; i < in.maps->size(); ++i) {
            const AnomalyMap& m = (*in.maps)[i];
            const FeatureMap& g = (*in.masks)[i];
            for (std::size_t p = 0; p < m.scores.size(); ++p) {
                scores.push_back(m.scores[p]);
                labels.push_back(g.data[p] != 0.0 ? 1 : 0);
            }
        }
        try {
            metrics["auroc_pixel"] = auroc(scores, labels);
        } catch (const numeric_error& e) {
            omitted["auroc_pixel"] = e.what();
        }
        try {
            metrics["pro"] = pro(*in.maps, *in.masks);
        } catch (const numeric_error& e) {
            omitted["pro"] = e.what();
        }
    } else {
        omitted["auroc_pixel"] = "no masks";
        omitted["pro"] = "no masks";
    }

    if (in.image_scores && in.image_anomalous) {
        try {
            metrics["auroc_image"] = auroc(*in.image_scores, *in.image_anomalous);
        } catch (const numeric_error& e) {
            omitted["auroc_image"] = e.what();
        }
    } else {
        omitted["auroc_image"] = "no image labels";
    }

    if (!omitted.empty()) metrics["omitted"] = omitted;
    return metrics;
}

namespace {

struct StageTimer {
    json& stages;
    std::string current;
    std::chrono::steady_clock::time_point started;

    explicit StageTimer(json& s) : stages(s) {}
    void begin(const std::string& name) {
        current = name;
        started = std::chrono::steady_clock::now();
    }
    void end() {
        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
        stages.push_back({{"name", current}, {"seconds", secs}});
    }
};

void write_json(const json& j, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw io_error("cannot write '" + path + "'");
    out << j.dump(2) << "\n";
}

}  // namespace

PipelineArtifacts run_pipeline(const PipelineConfig& config) {
    config.validate();
    config.validate_paths();
    fs::create_directories(config.paths.out_dir);
    const fs::path out_dir(config.paths.out_dir);

    json manifest;
    manifest["version"] = kVersion;
    manifest["seed"] = config.seed;
    manifest["config"] = config_to_map(config);
    manifest["stages"] = json::array();
    manifest["artifacts"] = json::array();
    manifest["status"] = "running";
    StageTimer timer(manifest["stages"]);
    const auto note_artifact = [&](const std::string& rel) {
        manifest["artifacts"].push_back(rel);
    };
    const auto log = [&](const std::string& msg) {
        if (!config.quiet) std::cerr << "[blindcluster] " << msg << "\n";
    };

    PipelineArtifacts art;
    std::string stage_name = "load_corpus";
    try {
        timer.begin("load_corpus");
        Corpus corpus = pipeline_load_corpus(config);
        for (const auto& item : corpus.items) art.ids.push_back(item.id);
        timer.end();
        log("corpus '" + corpus.name + "': " + std::to_string(corpus.items.size()) + " items, C=" +
            std::to_string(corpus.channels()));

        stage_name = "train_vae";
        timer.begin(stage_name);
        art.vae = stage_train_vae(config, corpus);
        save_vae(art.vae.model, (out_dir / "vae.vaem").string());
        note_artifact("vae.vaem");
        {
            std::ofstream trace(out_dir / "vae_loss.csv", std::ios::trunc);
            trace << "iteration,loss\n";
            for (std::size_t i = 0; i < art.vae.loss_trace.size(); ++i)
                trace << i << "," << fmt_double(art.vae.loss_trace[i]) << "\n";
        }
        note_artifact("vae_loss.csv");
        timer.end();
        log("vae trained (" + std::to_string(config.vae.iterations) + " iterations)");

        stage_name = "localize";
        timer.begin(stage_name);
        art.maps = stage_localize(config, corpus, art.vae.model);
        fs::create_directories(out_dir / "maps");
        for (std::size_t i = 0; i < art.maps.size(); ++i) {
            FeatureMap m(art.maps[i].height, art.maps[i].width, 1);
            m.data = art.maps[i].scores;
            save_feature_map(m, (out_dir / "maps" / (art.ids[i] + ".fmap")).string());
            write_pgm(art.maps[i], (out_dir / "maps" / (art.ids[i] + ".pgm")).string());
            note_artifact("maps/" + art.ids[i] + ".fmap");
        }
        for (const auto& m : art.maps) art.image_scores.push_back(image_score(m));
        {
            std::ofstream sc(out_dir / "image_scores.csv", std::ios::trunc);
            sc << "id,score\n";
            for (std::size_t i = 0; i < art.ids.size(); ++i)
                sc << art.ids[i] << "," << fmt_double(art.image_scores[i]) << "\n";
        }
        note_artifact("image_scores.csv");
        timer.end();
        log("anomaly maps computed");

        stage_name = "estimate_threshold";
        timer.begin(stage_name);
        art.threshold = stage_threshold(config, corpus, art.maps, art.image_scores);
        write_json(json{{"t", art.threshold.t},
                        {"normal_ratio", art.threshold.normal_ratio},
                        {"normal_cluster_index", art.threshold.normal_cluster_index}},
                   (out_dir / "threshold.json").string());
        note_artifact("threshold.json");
        timer.end();
        log("threshold t=" + fmt_double(art.threshold.t) +
            " (normal ratio " + fmt_double(art.threshold.normal_ratio) + ")");

        stage_name = "train_head";
        timer.begin(stage_name);
        art.head = stage_train_head(config, corpus, art.maps, art.threshold);
        save_pixelnet(art.head, (out_dir / "head.pnet").string());
        note_artifact("head.pnet");
        timer.end();
        log("projection head trained (" + std::to_string(config.contrastive.epochs) + " epochs)");

        stage_name = "cluster";
        timer.begin(stage_name);
        const ClusterStage cl = stage_cluster(config, corpus, art.maps, art.head);
        art.descriptors = cl.descriptors;
        art.labeling = cl.labeling;
        art.centers = cl.centers;
        save_descriptors_csv(art.descriptors, art.ids, (out_dir / "descriptors.csv").string());
        note_artifact("descriptors.csv");
        save_labeling_csv(art.labeling, art.ids, (out_dir / "labeling.csv").string());
        note_artifact("labeling.csv");
        save_centers_csv(art.centers, (out_dir / "centers.csv").string());
        note_artifact("centers.csv");
        timer.end();
        log("clustering done (" + config.clustering.method + ", k=" +
            std::to_string(config.clustering.n_clusters) + ")");

        stage_name = "evaluate";
        timer.begin(stage_name);
        if (corpus.has_labels()) {
            const Labeling truth = truth_labeling(corpus);
            EvalInputs in;
            in.pred = &art.labeling;
            in.truth = &truth;
            std::vector<FeatureMap> cropped_masks;
            std::vector<int> anomalous;
            for (const auto& item : corpus.items) anomalous.push_back(*item.gt_type > 0 ? 1 : 0);
            in.image_scores = &art.image_scores;
            in.image_anomalous = &anomalous;
            if (corpus.has_masks()) {
                for (std::size_t i = 0; i < corpus.items.size(); ++i) {
                    const int margin =
                        (corpus.items[i].features.height - art.maps[i].height) / 2;
                    cropped_masks.push_back(crop_border(*corpus.items[i].gt_mask, margin));
                }
                in.maps = &art.maps;
                in.masks = &cropped_masks;
            }
            art.metrics = evaluate_metrics(in);
            write_json(art.metrics, (out_dir / "metrics.json").string());
            note_artifact("metrics.json");
            if (!config.quiet) {
                std::cerr << "[blindcluster] metrics:\n";
                for (const auto& [key, value] : art.metrics.items())
                    if (value.is_number())
                        std::cerr << "  " << key << " = " << value.get<double>() << "\n";
            }
        } else {
            log("no ground-truth labels; metrics stage skipped");
            art.metrics = json{{"skipped", "no ground-truth labels"}};
        }
        timer.end();

        manifest["status"] = "ok";
        write_json(manifest, (out_dir / "manifest.json").string());
    } catch (...) {
        manifest["status"] = "FAILED at stage " + stage_name;
        try {
            write_json(manifest, (out_dir / "manifest.json").string());
        } catch (...) {
        }
        throw;
    }
    return art;
}

}  // namespace blindcluster
