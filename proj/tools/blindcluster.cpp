// blindcluster - blind anomaly localization and clustering for texture
// feature maps. Subcommands cover the full pipeline plus stage-by-stage runs.
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "CLI11.hpp"

#include "blindcluster/pipeline.hpp"

namespace fs = std::filesystem;
using namespace blindcluster;
using nlohmann::json;

namespace {

struct GlobalOpts {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out_dir;
    std::optional<int> threads;
    bool quiet = false;
    std::optional<double> threshold;
};

PipelineConfig resolve_config(const GlobalOpts& g, bool need_config) {
    PipelineConfig cfg;
    if (!g.config_path.empty()) {
        cfg = parse_config_file(g.config_path);
    } else if (need_config) {
        throw param_error("--config is required for this subcommand");
    }
    if (g.seed) cfg.seed = *g.seed;
    if (!g.out_dir.empty()) cfg.paths.out_dir = g.out_dir;
    if (g.threads) {
        cfg.threads = *g.threads;
    } else if (const char* env = std::getenv("BLINDCLUSTER_THREADS")) {
        try {
            cfg.threads = std::max(1, std::stoi(env));
        } catch (const std::exception&) {
            throw param_error("BLINDCLUSTER_THREADS: not an integer");
        }
    }
    if (g.quiet) cfg.quiet = true;
    if (g.threshold) cfg.threshold_override = *g.threshold;
    cfg.validate();
    return cfg;
}

void write_json_file(const json& j, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw io_error("cannot write '" + path + "'");
    out << j.dump(2) << "\n";
}

std::vector<double> parse_scales(const std::string& spec) {
    std::vector<double> scales;
    std::stringstream ss(spec);
    std::string field;
    while (std::getline(ss, field, ',')) {
        try {
            scales.push_back(std::stod(field));
        } catch (const std::exception&) {
            throw param_error("--scales: bad value '" + field + "'");
        }
    }
    return scales;
}

// artifacts shared by the stage subcommands
std::vector<AnomalyMap> load_maps_dir(const std::string& maps_dir,
                                      const std::vector<std::string>& ids) {
    std::vector<AnomalyMap> maps;
    for (const auto& id : ids) {
        const std::string path = (fs::path(maps_dir) / (id + ".fmap")).string();
        if (!fs::exists(path))
            throw io_error("expected anomaly map '" + path + "' (run the localize stage first)");
        const FeatureMap m = load_feature_map(path);
        AnomalyMap a(m.height, m.width);
        a.scores = m.data;
        maps.push_back(std::move(a));
    }
    return maps;
}

std::vector<AnomalyMap> load_maps(const std::string& out_dir, const std::vector<std::string>& ids) {
    return load_maps_dir((fs::path(out_dir) / "maps").string(), ids);
}

std::vector<double> image_scores_of(const std::vector<AnomalyMap>& maps) {
    std::vector<double> scores;
    scores.reserve(maps.size());
    for (const auto& m : maps) scores.push_back(image_score(m));
    return scores;
}

ThresholdEstimate load_threshold(const std::string& out_dir) {
    const std::string path = (fs::path(out_dir) / "threshold.json").string();
    std::ifstream in(path);
    if (!in) throw io_error("expected '" + path + "' (run estimate-threshold first)");
    json j;
    in >> j;
    ThresholdEstimate est;
    est.t = j.at("t").get<double>();
    est.normal_ratio = j.at("normal_ratio").get<double>();
    est.normal_cluster_index = j.at("normal_cluster_index").get<int>();
    return est;
}

int run_cli(int argc, char** argv) {
    CLI::App app{"blind anomaly localization and clustering on texture feature maps"};
    app.require_subcommand(1);

    GlobalOpts g;
    app.add_option("--config", g.config_path, "pipeline configuration file");
    app.add_option("--seed", g.seed, "seed override");
    app.add_option("--out", g.out_dir, "output directory override");
    app.add_option("--threads", g.threads, "worker threads (or BLINDCLUSTER_THREADS)");
    app.add_flag("--quiet", g.quiet, "suppress progress output");
    app.add_option("--threshold", g.threshold, "binarization threshold override");

    // gen-synthetic
    auto* gen = app.add_subcommand("gen-synthetic", "generate a synthetic corpus with planted anomalies");
    SyntheticSpec spec;
    gen->add_option("--n-images", spec.n_images);
    gen->add_option("--height", spec.height);
    gen->add_option("--width", spec.width);
    gen->add_option("--channels", spec.channels);
    gen->add_option("--types", spec.n_anomaly_types);
    gen->add_option("--normal-fraction", spec.normal_fraction);
    gen->add_option("--area-fraction", spec.anomaly_area_fraction);
    gen->add_option("--smoothness", spec.base_smoothness);
    gen->add_option("--perturbation", spec.perturbation_strength);
    gen->add_option("--modes", spec.n_normal_modes);
    gen->callback([&]() {
        if (g.out_dir.empty()) throw param_error("gen-synthetic: --out is required");
        spec.validate();
        RngState rng(g.seed.value_or(1));
        const Corpus corpus = gen_synthetic_corpus(spec, rng);
        save_corpus_dir(corpus, g.out_dir);
        std::ofstream echo(fs::path(g.out_dir) / "synthetic_spec.txt", std::ios::trunc);
        echo << "n_images = " << spec.n_images << "\nheight = " << spec.height
             << "\nwidth = " << spec.width << "\nchannels = " << spec.channels
             << "\nn_anomaly_types = " << spec.n_anomaly_types
             << "\nnormal_fraction = " << spec.normal_fraction
             << "\nanomaly_area_fraction = " << spec.anomaly_area_fraction
             << "\nbase_smoothness = " << spec.base_smoothness
             << "\nperturbation_strength = " << spec.perturbation_strength
             << "\nn_normal_modes = " << spec.n_normal_modes
             << "\nseed = " << g.seed.value_or(1) << "\n";
        if (!g.quiet)
            std::cerr << "[blindcluster] wrote " << corpus.items.size() << " items to " << g.out_dir
                      << "\n";
    });

    // extract-features
    auto* extract = app.add_subcommand("extract-features",
                                       "classical filter-bank features from a grayscale FMAP");
    std::string ex_in, ex_out, ex_scales = "1.0,2.0";
    extract->add_option("--in", ex_in, "grayscale C=1 FMAP")->required();
    extract->add_option("--out-file", ex_out, "output FMAP path")->required();
    extract->add_option("--scales", ex_scales, "comma-separated Gaussian scales");
    extract->callback([&]() {
        const FeatureMap gray = load_feature_map(ex_in);
        const FeatureMap feats = extract_classical_features(gray, parse_scales(ex_scales));
        save_feature_map(feats, ex_out);
        if (!g.quiet)
            std::cerr << "[blindcluster] " << feats.channels << " channels -> " << ex_out << "\n";
    });

    // train-vae
    auto* tv = app.add_subcommand("train-vae", "train the feature-space VAE");
    tv->callback([&]() {
        const PipelineConfig cfg = resolve_config(g, true);
        cfg.validate_paths();
        fs::create_directories(cfg.paths.out_dir);
        const Corpus corpus = pipeline_load_corpus(cfg);
        const TrainedVae trained = stage_train_vae(cfg, corpus);
        save_vae(trained.model, (fs::path(cfg.paths.out_dir) / "vae.vaem").string());
        std::ofstream trace(fs::path(cfg.paths.out_dir) / "vae_loss.csv", std::ios::trunc);
        trace << "iteration,loss\n";
        for (std::size_t i = 0; i < trained.loss_trace.size(); ++i)
            trace << i << "," << trained.loss_trace[i] << "\n";
        if (!cfg.quiet) std::cerr << "[blindcluster] vae.vaem written\n";
    });

    // localize
    auto* loc = app.add_subcommand("localize", "compute anomaly maps with the trained VAE");
    loc->callback([&]() {
        const PipelineConfig cfg = resolve_config(g, true);
        cfg.validate_paths();
        const Corpus corpus = pipeline_load_corpus(cfg);
        const VaeModel model = load_vae((fs::path(cfg.paths.out_dir) / "vae.vaem").string());
        const auto maps = stage_localize(cfg, corpus, model);
        fs::create_directories(fs::path(cfg.paths.out_dir) / "maps");
        std::ofstream sc(fs::path(cfg.paths.out_dir) / "image_scores.csv", std::ios::trunc);
        sc << "id,score\n";
        char buf[32];
        for (std::size_t i = 0; i < maps.size(); ++i) {
            FeatureMap m(maps[i].height, maps[i].width, 1);
            m.data = maps[i].scores;
            const std::string id = corpus.items[i].id;
            save_feature_map(m, (fs::path(cfg.paths.out_dir) / "maps" / (id + ".fmap")).string());
            write_pgm(maps[i], (fs::path(cfg.paths.out_dir) / "maps" / (id + ".pgm")).string());
            std::snprintf(buf, sizeof(buf), "%.17g", image_score(maps[i]));
            sc << id << "," << buf << "\n";
        }
        if (!cfg.quiet) std::cerr << "[blindcluster] " << maps.size() << " anomaly maps written\n";
    });

    // estimate-threshold
    auto* et = app.add_subcommand("estimate-threshold", "unsupervised binarization threshold");
    et->callback([&]() {
        const PipelineConfig cfg = resolve_config(g, true);
        cfg.validate_paths();
        const Corpus corpus = pipeline_load_corpus(cfg);
        const auto maps = load_maps(cfg.paths.out_dir, [&] {
            std::vector<std::string> ids;
            for (const auto& it : corpus.items) ids.push_back(it.id);
            return ids;
        }());
        const auto scores = image_scores_of(maps);
        const ThresholdEstimate est = stage_threshold(cfg, corpus, maps, scores);
        write_json_file(json{{"t", est.t},
                             {"normal_ratio", est.normal_ratio},
                             {"normal_cluster_index", est.normal_cluster_index}},
                        (fs::path(cfg.paths.out_dir) / "threshold.json").string());
        if (!cfg.quiet) std::cerr << "[blindcluster] threshold t=" << est.t << "\n";
    });

    // train-head
    auto* th = app.add_subcommand("train-head", "anomaly-targeted contrastive projection head");
    th->callback([&]() {
        const PipelineConfig cfg = resolve_config(g, true);
        cfg.validate_paths();
        const Corpus corpus = pipeline_load_corpus(cfg);
        std::vector<std::string> ids;
        for (const auto& it : corpus.items) ids.push_back(it.id);
        const auto maps = load_maps(cfg.paths.out_dir, ids);
        const ThresholdEstimate est =
            cfg.threshold_override
                ? ThresholdEstimate{*cfg.threshold_override, 0.0, -1}
                : load_threshold(cfg.paths.out_dir);
        const PixelNet head = stage_train_head(cfg, corpus, maps, est);
        save_pixelnet(head, (fs::path(cfg.paths.out_dir) / "head.pnet").string());
        if (!cfg.quiet) std::cerr << "[blindcluster] head.pnet written\n";
    });

    // cluster
    auto* cl = app.add_subcommand("cluster", "descriptor pooling and final clustering");
    cl->callback([&]() {
        const PipelineConfig cfg = resolve_config(g, true);
        cfg.validate_paths();
        const Corpus corpus = pipeline_load_corpus(cfg);
        std::vector<std::string> ids;
        for (const auto& it : corpus.items) ids.push_back(it.id);
        const auto maps = load_maps(cfg.paths.out_dir, ids);
        const PixelNet head = load_pixelnet((fs::path(cfg.paths.out_dir) / "head.pnet").string());
        const ClusterStage stage = stage_cluster(cfg, corpus, maps, head);
        save_descriptors_csv(stage.descriptors, ids,
                             (fs::path(cfg.paths.out_dir) / "descriptors.csv").string());
        save_labeling_csv(stage.labeling, ids,
                          (fs::path(cfg.paths.out_dir) / "labeling.csv").string());
        save_centers_csv(stage.centers, (fs::path(cfg.paths.out_dir) / "centers.csv").string());
        if (!cfg.quiet) std::cerr << "[blindcluster] labeling.csv written\n";
    });

    // evaluate
    auto* ev = app.add_subcommand("evaluate", "metrics for a predicted labeling");
    std::string ev_pred, ev_truth, ev_maps_dir, ev_masks_dir, ev_out;
    ev->add_option("--pred", ev_pred, "predicted labeling CSV")->required();
    ev->add_option("--truth", ev_truth, "ground-truth labels CSV (id,gt_type)")->required();
    ev->add_option("--maps-dir", ev_maps_dir, "directory of anomaly-map FMAPs");
    ev->add_option("--masks-dir", ev_masks_dir, "directory of ground-truth mask FMAPs");
    ev->add_option("--out-file", ev_out, "metrics JSON path (stdout when empty)");
    ev->callback([&]() {
        std::vector<std::string> pred_ids;
        const Labeling pred = load_labeling_csv(ev_pred, &pred_ids);

        std::ifstream in(ev_truth);
        if (!in) throw io_error("cannot open truth labels '" + ev_truth + "'");
        std::string line;
        std::getline(in, line);
        std::map<std::string, int> truth_by_id;
        while (std::getline(in, line)) {
            if (line.empty() || line == "\r") continue;
            const auto comma = line.find(',');
            if (comma == std::string::npos)
                throw format_error("truth labels: malformed row '" + line + "'");
            std::string v = line.substr(comma + 1);
            if (!v.empty() && v.back() == '\r') v.pop_back();
            truth_by_id[line.substr(0, comma)] = std::stoi(v);
        }
        std::vector<std::string> missing;
        std::vector<int> types;
        for (const auto& id : pred_ids) {
            const auto it = truth_by_id.find(id);
            if (it == truth_by_id.end())
                missing.push_back(id);
            else
                types.push_back(it->second);
        }
        if (!missing.empty()) {
            std::string list;
            for (const auto& id : missing) list += (list.empty() ? "" : ", ") + id;
            throw param_error("evaluate: ids missing from truth labels: " + list);
        }
        std::vector<int> uniq = types;
        std::sort(uniq.begin(), uniq.end());
        uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
        Labeling truth;
        truth.n_clusters = static_cast<int>(uniq.size());
        for (int t : types)
            truth.labels.push_back(static_cast<int>(
                std::lower_bound(uniq.begin(), uniq.end(), t) - uniq.begin()));

        EvalInputs inputs;
        inputs.pred = &pred;
        inputs.truth = &truth;
        std::vector<AnomalyMap> maps;
        std::vector<FeatureMap> masks;
        std::vector<double> iscores;
        std::vector<int> ianom;
        for (std::size_t i = 0; i < pred_ids.size(); ++i) ianom.push_back(types[i] > 0 ? 1 : 0);
        if (!ev_maps_dir.empty()) {
            maps = load_maps_dir(ev_maps_dir, pred_ids);
            iscores = image_scores_of(maps);
            inputs.image_scores = &iscores;
            inputs.image_anomalous = &ianom;
            if (!ev_masks_dir.empty()) {
                for (std::size_t i = 0; i < pred_ids.size(); ++i) {
                    FeatureMap mask = load_feature_map(
                        (fs::path(ev_masks_dir) / (pred_ids[i] + ".mask.fmap")).string());
                    const int margin = (mask.height - maps[i].height) / 2;
                    masks.push_back(crop_border(mask, margin));
                }
                inputs.maps = &maps;
                inputs.masks = &masks;
            }
        }
        const json metrics = evaluate_metrics(inputs);
        if (ev_out.empty())
            std::cout << metrics.dump(2) << "\n";
        else
            write_json_file(metrics, ev_out);
    });

    // segment
    auto* seg = app.add_subcommand("segment", "pixel-level labeling of an unseen image");
    std::string seg_features, seg_model_dir, seg_out;
    seg->add_option("--features", seg_features, "FMAP of the unseen image's features")->required();
    seg->add_option("--model-dir", seg_model_dir, "directory with head.pnet and centers.csv")
        ->required();
    seg->add_option("--out-prefix", seg_out, "output prefix (<prefix>.fmap, <prefix>.pgm)")
        ->required();
    seg->callback([&]() {
        const PipelineConfig cfg = resolve_config(g, false);
        std::vector<std::string> missing_files;
        const std::string head_path = (fs::path(seg_model_dir) / "head.pnet").string();
        const std::string centers_path = (fs::path(seg_model_dir) / "centers.csv").string();
        if (!fs::exists(head_path)) missing_files.push_back(head_path);
        if (!fs::exists(centers_path)) missing_files.push_back(centers_path);
        if (!missing_files.empty()) {
            std::string list;
            for (const auto& f : missing_files) list += (list.empty() ? "" : ", ") + f;
            throw io_error("segment: missing trained artifacts: " + list);
        }
        const PixelNet head = load_pixelnet(head_path);
        const auto centers = load_centers_csv(centers_path);
        const FeatureMap feats = load_feature_map(seg_features);
        const LabelGrid grid = segment_pixels(feats, head, centers,
                                              cfg.contrastive.feature_smooth_sigma,
                                              cfg.fca.border_margin);
        FeatureMap out(grid.height, grid.width, 1);
        for (std::size_t p = 0; p < grid.labels.size(); ++p)
            out.data[p] = static_cast<double>(grid.labels[p]);
        save_feature_map(out, seg_out + ".fmap");
        write_label_pgm(grid.labels, grid.height, grid.width, grid.n_clusters, seg_out + ".pgm");
        if (!g.quiet) std::cerr << "[blindcluster] segmentation written to " << seg_out << ".*\n";
    });

    // pipeline
    auto* pl = app.add_subcommand("pipeline", "full run: vae -> localize -> head -> cluster -> metrics");
    pl->callback([&]() {
        const PipelineConfig cfg = resolve_config(g, true);
        run_pipeline(cfg);
    });

    CLI11_PARSE(app, argc, argv);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run_cli(argc, argv);
    } catch (const param_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const format_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const io_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const numeric_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
