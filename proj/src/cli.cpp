#include "avbr/cli.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "avbr/digest.hpp"
#include "avbr/errors.hpp"
#include "avbr/eval.hpp"
#include "avbr/features.hpp"
#include "avbr/fusion.hpp"
#include "avbr/harness.hpp"
#include "avbr/ledger.hpp"
#include "avbr/loss.hpp"
#include "avbr/manifest.hpp"
#include "avbr/media.hpp"
#include "avbr/models.hpp"
#include "avbr/parallel.hpp"
#include "json.hpp"

namespace avbr::cli {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

// ---- shared option bundles -----------------------------------------------------

struct CommonOptions {
    std::string manifest_path;
    std::string out_dir = "out";
    std::string features_dir;
    std::string modalities_csv = "a,v,s";
    std::string fusion_text = "average";
    std::string weights_csv;
    std::string model_name = "linear";
    uint64_t seed = 0;
    uint64_t encoder_seed = 0;
    int dim = 1024;
    std::string encoder_mode = "hash";  // hash | separable
    double noise_scale = 0.05;
    int epochs = 100;
    int batch_size = 1024;
    double learning_rate = 1e-3;
    int heads = 8;
    int ff_dim = 2048;
    double dropout = 0.1;
    int max_iterations = 3000;
    std::string split = "test";
    std::string sidecar_path;
    std::string template_path;
    std::string client_name = "mock";
    std::string step2_client_name;  // defaults to the step-1 client
    std::string endpoint;
    std::string http_model;
    std::string token_env = "AVBR_API_TOKEN";
    std::string config_path;
    bool resume = false;
    int workers = 4;
};

void add_manifest_flags(CLI::App* cmd, CommonOptions& o) {
    cmd->add_option("--manifest", o.manifest_path, "Manifest JSONL path")->required();
    cmd->add_option("--out", o.out_dir, "Output directory");
    cmd->add_option("--seed", o.seed, "Run seed");
    cmd->add_flag("--resume", o.resume, "Skip when the ledger already has this run");
}

void add_feature_flags(CLI::App* cmd, CommonOptions& o) {
    cmd->add_option("--features-dir", o.features_dir,
                    "Directory of .avfc caches (default: mock extraction in memory)");
    cmd->add_option("--modalities", o.modalities_csv, "Subset of a,v,s");
    cmd->add_option("--dim", o.dim, "Mock encoder dimension");
    cmd->add_option("--encoder-seed", o.encoder_seed, "Mock encoder seed");
    cmd->add_option("--encoder-mode", o.encoder_mode, "Mock mode: hash | separable");
    cmd->add_option("--noise-scale", o.noise_scale, "Separable-mode noise scale");
}

void add_model_flags(CLI::App* cmd, CommonOptions& o) {
    cmd->add_option("--model", o.model_name, "Classifier: linear | mlp | temporal");
    cmd->add_option("--fusion", o.fusion_text, "Fusion: average | max | concat | weighted");
    cmd->add_option("--weights", o.weights_csv, "Weighted-fusion weights, e.g. a=1,v=1,s=2");
    cmd->add_option("--epochs", o.epochs, "Temporal training epochs");
    cmd->add_option("--batch-size", o.batch_size, "Temporal batch size");
    cmd->add_option("--lr", o.learning_rate, "Learning rate");
    cmd->add_option("--heads", o.heads, "Attention heads");
    cmd->add_option("--ff-dim", o.ff_dim, "Feed-forward width");
    cmd->add_option("--dropout", o.dropout, "Dropout rate");
    cmd->add_option("--max-iter", o.max_iterations, "Linear/MLP iteration cap");
}

void add_client_flags(CLI::App* cmd, CommonOptions& o) {
    cmd->add_option("--client", o.client_name, "mock | mock-echo | http");
    cmd->add_option("--step2-client", o.step2_client_name,
                    "Separate step-2 client (defaults to --client)");
    cmd->add_option("--endpoint", o.endpoint, "HTTP endpoint URL");
    cmd->add_option("--http-model", o.http_model, "HTTP model name");
    cmd->add_option("--token-env", o.token_env, "Env var holding the API token");
    cmd->add_option("--sidecar", o.sidecar_path, "AC/ST sidecar JSONL");
    cmd->add_option("--template", o.template_path, "Prompt template JSON");
    cmd->add_option("--workers", o.workers, "Concurrent client requests");
}

std::vector<Modality> parse_modalities(const std::string& csv) {
    std::vector<Modality> out;
    std::istringstream in(csv);
    std::string item;
    while (std::getline(in, item, ',')) {
        const auto m = parse_modality(item);
        if (!m) throw ConfigError("unknown modality \"" + item + "\"");
        out.push_back(*m);
    }
    if (out.empty()) throw ConfigError("empty modality set");
    // canonical (audio, visual, speech) order, duplicates rejected
    std::vector<Modality> ordered;
    for (Modality want : {Modality::audio, Modality::visual, Modality::speech,
                          Modality::image}) {
        int n = 0;
        for (Modality m : out) n += (m == want);
        if (n > 1) throw ConfigError("duplicate modality in --modalities");
        if (n == 1) ordered.push_back(want);
    }
    return ordered;
}

FusionSpec resolve_fusion(const CommonOptions& o, const std::vector<Modality>& mods) {
    std::string text = o.fusion_text;
    if (!o.weights_csv.empty()) {
        text = "weighted:" + o.weights_csv;
    }
    return parse_fusion_spec(text, mods);
}

MockEncoderOptions::Mode parse_encoder_mode(const std::string& mode) {
    if (mode == "hash") return MockEncoderOptions::Mode::hash;
    if (mode == "separable") return MockEncoderOptions::Mode::separable;
    throw ConfigError("unknown encoder mode \"" + mode + "\"");
}

Split resolve_split(const std::string& name) {
    const auto s = parse_split(name);
    if (!s) throw ConfigError("unknown split \"" + name + "\"");
    return *s;
}

std::string cache_file(const std::string& dir, Modality m, Level level) {
    return dir + "/" + std::string(to_string(m)) + "." + std::string(to_string(level)) +
           ".avfc";
}

// Mock feature tables for the requested modalities, honoring the reference
// rule that clip-level speech is the mean of its segment vectors.
struct FeatureBundle {
    std::vector<FeatureTable> clip_tables;
    std::vector<FeatureTable> segment_tables;
};

FeatureTable pool_clip_level(const FeatureTable& segments) {
    FeatureTable out;
    out.modality = segments.modality;
    out.level = Level::clip;
    out.dim = segments.dim;
    std::vector<std::string> order;
    std::map<std::string, std::vector<std::vector<float>>> per_clip;
    for (const auto& e : segments.entries) {
        if (per_clip.find(e.clip_id) == per_clip.end()) order.push_back(e.clip_id);
        per_clip[e.clip_id].push_back(e.values);
    }
    for (const auto& clip_id : order) {
        out.entries.push_back({clip_id, -1, pool_time(per_clip[clip_id])});
    }
    out.validate();
    return out;
}

FeatureBundle mock_features(const DatasetManifest& manifest,
                            const std::vector<Modality>& mods, const CommonOptions& o,
                            bool need_clip, bool need_segment) {
    FeatureBundle bundle;
    SyntheticMediaResolver media(o.encoder_seed);
    MockEncoderOptions options;
    options.mode = parse_encoder_mode(o.encoder_mode);
    options.noise_scale = o.noise_scale;
    for (Modality m : mods) {
        // labels ride along for the separable mode
        struct LabelledMock final : EncoderAdapter {
            std::unique_ptr<EncoderAdapter> inner;
            explicit LabelledMock(std::unique_ptr<EncoderAdapter> e) : inner(std::move(e)) {}
            std::string name() const override { return inner->name(); }
            Modality modality() const override { return inner->modality(); }
            Level level() const override { return inner->level(); }
            int dim() const override { return inner->dim(); }
            std::vector<float> encode(const EncodeRequest& r) override {
                return inner->encode(r);
            }
        };
        FeatureTable segment_table;
        if (need_segment || (need_clip && m == Modality::speech)) {
            auto adapter = mock_encoder(o.encoder_seed, m, Level::segment, o.dim, options);
            segment_table =
                extract_features(manifest, *adapter, media, o.workers).table;
        }
        if (need_segment) bundle.segment_tables.push_back(segment_table);
        if (need_clip) {
            if (m == Modality::speech) {
                bundle.clip_tables.push_back(pool_clip_level(segment_table));
            } else {
                auto adapter = mock_encoder(o.encoder_seed, m, Level::clip, o.dim, options);
                bundle.clip_tables.push_back(
                    extract_features(manifest, *adapter, media, o.workers).table);
            }
        }
    }
    return bundle;
}

FeatureBundle load_or_mock_features(const DatasetManifest& manifest,
                                    const std::vector<Modality>& mods,
                                    const CommonOptions& o, bool need_clip,
                                    bool need_segment) {
    if (o.features_dir.empty()) {
        return mock_features(manifest, mods, o, need_clip, need_segment);
    }
    FeatureBundle bundle;
    for (Modality m : mods) {
        if (need_clip) bundle.clip_tables.push_back(read_cache(cache_file(o.features_dir, m, Level::clip)));
        if (need_segment) {
            bundle.segment_tables.push_back(
                read_cache(cache_file(o.features_dir, m, Level::segment)));
        }
    }
    return bundle;
}

ClassifierConfig build_classifier_config(const CommonOptions& o,
                                         const std::vector<Modality>& mods) {
    const auto kind = parse_classifier_kind(o.model_name);
    if (!kind) throw ConfigError("unknown model \"" + o.model_name + "\"");
    ClassifierConfig cfg = default_classifier_config(*kind, mods, resolve_fusion(o, mods));
    cfg.seed = o.seed;
    cfg.epochs = o.epochs;
    cfg.batch_size = o.batch_size;
    cfg.learning_rate = o.learning_rate;
    cfg.heads = o.heads;
    cfg.ff_dim = o.ff_dim;
    cfg.dropout = o.dropout;
    cfg.max_iterations = o.max_iterations;
    return cfg;
}

std::string modality_label(const std::vector<Modality>& mods) {
    std::string out;
    for (Modality m : mods) {
        std::string name(to_string(m));
        name[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(name[0])));
        if (!out.empty()) out += "-";
        out += name;
    }
    return out;
}

std::string short_modality_label(const std::vector<Modality>& mods) {
    std::string out;
    for (Modality m : mods) {
        if (!out.empty()) out += "+";
        switch (m) {
            case Modality::audio: out += "A"; break;
            case Modality::visual: out += "V"; break;
            case Modality::speech: out += "S"; break;
            case Modality::image: out += "I"; break;
        }
    }
    return out;
}

void ensure_dir(const std::string& dir) { fs::create_directories(dir); }

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path);
    out << text;
}

struct RunRecorder {
    std::string out_dir;
    std::string command;
    ordered_json config;
    uint64_t seed = 0;
    ordered_json metrics = ordered_json::object();
    std::vector<ArtifactRef> artifacts;

    std::string run_id() const { return compute_run_id(command, config); }

    void add_artifact(const std::string& rel_path) {
        artifacts.push_back({rel_path, sha256_file(out_dir + "/" + rel_path)});
    }

    void commit() {
        LedgerEntry entry;
        entry.run_id = run_id();
        entry.command = command;
        entry.config = config;
        entry.seed = seed;
        entry.metrics = metrics;
        entry.artifacts = artifacts;
        append_ledger(out_dir + "/ledger.jsonl", entry);
    }
};

bool resume_hit(const RunRecorder& rec, bool resume) {
    if (!resume) return false;
    if (run_is_current(rec.out_dir + "/ledger.jsonl", rec.run_id(), rec.out_dir)) {
        std::cout << "resume: run " << rec.run_id() << " is up to date, nothing to do\n";
        return true;
    }
    return false;
}

ordered_json options_json(const CommonOptions& o, const std::vector<Modality>& mods,
                          const std::string& extra_model = "") {
    ordered_json cfg;
    cfg["manifest"] = o.manifest_path;
    cfg["modalities"] = short_modality_label(mods);
    cfg["model"] = extra_model.empty() ? o.model_name : extra_model;
    cfg["fusion"] = o.fusion_text;
    if (!o.weights_csv.empty()) cfg["weights"] = o.weights_csv;
    cfg["seed"] = o.seed;
    cfg["encoder_seed"] = o.encoder_seed;
    cfg["dim"] = o.dim;
    cfg["encoder_mode"] = o.encoder_mode;
    return cfg;
}

// ---- composite image helper -----------------------------------------------------

struct CompositeSet {
    std::map<std::string, std::string> relative_paths;  // clip -> path under out_dir
    std::map<std::string, Image> images;
};

CompositeSet write_composites(const DatasetManifest& manifest, Split split,
                              const std::string& out_dir) {
    CompositeSet out;
    ensure_dir(out_dir + "/composites");
    std::string sidecar_lines;
    SyntheticMediaResolver media;
    for (const auto& clip : manifest.clips) {
        if (clip.split != split) continue;
        const FrameSequence frames = media.frames(clip);
        const auto indices = select_grid_frames(static_cast<int>(frames.frames.size()));
        const CompositeImage composite = compose_grid(frames, indices);
        const std::string rel = "composites/" + clip.clip_id + ".grid.ppm";
        write_ppm(composite.image, out_dir + "/" + rel);
        out.relative_paths[clip.clip_id] = rel;
        out.images[clip.clip_id] = composite.image;
        ordered_json line;
        line["clip_id"] = clip.clip_id;
        line["image"] = rel;
        line["source_indices"] = composite.source_indices;
        sidecar_lines += line.dump();
        sidecar_lines += '\n';
    }
    write_text(out_dir + "/composites/index.jsonl", sidecar_lines);
    return out;
}

// ---- client factory ----------------------------------------------------------------

struct ClientHolder {
    std::unique_ptr<MllmClient> owned;
    std::unique_ptr<CachingMllmClient> cached;
    MllmClient* get() { return cached.get(); }
};

ClientHolder make_client(const CommonOptions& o, const std::string& name) {
    ClientHolder holder;
    if (name == "mock") {
        holder.owned = std::make_unique<MockMllmClient>();
    } else if (name == "mock-echo") {
        holder.owned = std::make_unique<EchoMllmClient>();
    } else if (name == "http") {
        HttpClientConfig cfg;
        cfg.endpoint = o.endpoint;
        cfg.model = o.http_model;
        cfg.token_env = o.token_env;
        if (cfg.endpoint.empty() || cfg.model.empty()) {
            throw ConfigError("http client requires --endpoint and --http-model");
        }
        holder.owned = make_http_client(cfg);
    } else {
        throw ConfigError("unknown client \"" + name + "\"");
    }
    holder.cached = std::make_unique<CachingMllmClient>(*holder.owned);
    return holder;
}

PromptTemplate resolve_template(const CommonOptions& o) {
    if (o.template_path.empty()) return default_prompt_template();
    return load_prompt_template(o.template_path);
}

Sidecar resolve_sidecar(const CommonOptions& o, const DatasetManifest& manifest) {
    if (o.sidecar_path.empty()) return synthetic_sidecar(manifest, o.seed);
    return load_sidecar(o.sidecar_path);
}

// ---- train / eval -----------------------------------------------------------------

EvalReport run_eval(const TrainedModel& model, const DatasetManifest& manifest,
                    const FeatureBundle& features, Split split) {
    EvalReport report;
    if (model.config.kind == ClassifierKind::temporal) {
        std::vector<const FeatureTable*> tables;
        for (const auto& t : features.segment_tables) tables.push_back(&t);
        const WindowDataset data = build_window_dataset(tables, manifest, split);
        report = evaluate(prediction_matrix(model, data));
    } else {
        std::vector<const FeatureTable*> tables;
        for (const auto& t : features.clip_tables) tables.push_back(&t);
        const ClipDataset data = build_clip_dataset(tables, manifest, split);
        report = evaluate(prediction_matrix(model, data));
    }
    report.model = std::string(to_string(model.config.kind));
    report.modalities = short_modality_label(model.config.modalities);
    report.fusion = to_string(model.config.fusion, model.config.modalities);
    return report;
}

TrainedModel run_training(const DatasetManifest& manifest, const FeatureBundle& features,
                          const ClassifierConfig& cfg) {
    const LossConfig loss = class_weights(manifest, Split::train);
    if (cfg.kind == ClassifierKind::temporal) {
        std::vector<const FeatureTable*> tables;
        for (const auto& t : features.segment_tables) tables.push_back(&t);
        const WindowDataset train = build_window_dataset(tables, manifest, Split::train);
        const WindowDataset val = build_window_dataset(tables, manifest, Split::val);
        TrainingData train_data;
        train_data.windows = &train;
        TrainingData val_data;
        val_data.windows = &val;
        return train_classifier(cfg, train_data, val_data, loss);
    }
    std::vector<const FeatureTable*> tables;
    for (const auto& t : features.clip_tables) tables.push_back(&t);
    const ClipDataset train = build_clip_dataset(tables, manifest, Split::train);
    const ClipDataset val = build_clip_dataset(tables, manifest, Split::val);
    TrainingData train_data;
    train_data.clips = &train;
    TrainingData val_data;
    val_data.clips = &val;
    return train_classifier(cfg, train_data, val_data, loss);
}

// ---- subcommand bodies ---------------------------------------------------------------

int cmd_synth(const CommonOptions& o, const std::string& counts_csv, int total,
              const std::string& fractions_csv, const std::string& duration_text,
              const std::string& manifest_out, const std::string& sidecar_out) {
    SynthesisSpec spec = reference_synthesis_spec();
    if (!counts_csv.empty()) {
        std::istringstream in(counts_csv);
        std::string item;
        size_t i = 0;
        while (std::getline(in, item, ',')) {
            if (i >= spec.category_counts.size()) throw ConfigError("too many counts");
            spec.category_counts[i++] = std::stoi(item);
        }
        if (i != spec.category_counts.size()) throw ConfigError("need 10 counts");
    }
    if (total > 0) spec.total_clips = total;
    if (!fractions_csv.empty()) {
        std::istringstream in(fractions_csv);
        std::string item;
        size_t i = 0;
        while (std::getline(in, item, ',') && i < 3) {
            spec.split_fractions[i++] = std::stod(item);
        }
    }
    if (!duration_text.empty()) {
        if (duration_text == "stats") {
            spec.durations.kind = DurationModel::Kind::stat_targets;
        } else if (duration_text.rfind("const:", 0) == 0) {
            spec.durations.kind = DurationModel::Kind::constant;
            spec.durations.constant_s = std::stod(duration_text.substr(6));
        } else {
            throw ConfigError("--duration must be 'stats' or 'const:<seconds>'");
        }
    }
    const DatasetManifest manifest = synthesize_manifest(o.seed, spec);
    save_manifest(manifest, manifest_out);
    std::cout << "wrote " << manifest.clips.size() << " clips to " << manifest_out << "\n";
    if (!sidecar_out.empty()) {
        save_sidecar(synthetic_sidecar(manifest, o.seed), sidecar_out);
        std::cout << "wrote sidecar " << sidecar_out << "\n";
    }
    return 0;
}

int cmd_validate(const CommonOptions& o, bool strict, const std::string& report_out) {
    const DatasetManifest manifest = load_manifest(o.manifest_path);
    const StatisticsReport report = validate_statistics(manifest, reference_expectations());
    std::cout << report.to_text();
    if (!report_out.empty()) {
        write_text(report_out, report.to_json());
    }
    if (strict && !report.all_pass) return 1;
    return 0;
}

int cmd_extract(const CommonOptions& o, const std::string& level_text) {
    const DatasetManifest manifest = load_manifest(o.manifest_path);
    const auto mods = parse_modalities(o.modalities_csv);
    const bool need_clip = level_text == "clip" || level_text == "both";
    const bool need_segment = level_text == "segment" || level_text == "both";
    if (!need_clip && !need_segment) throw ConfigError("--level must be clip|segment|both");

    RunRecorder rec;
    rec.out_dir = o.out_dir;
    rec.command = "extract";
    rec.config = options_json(o, mods);
    rec.config["level"] = level_text;
    rec.seed = o.seed;
    ensure_dir(o.out_dir + "/features");
    if (resume_hit(rec, o.resume)) return 0;

    const FeatureBundle bundle = mock_features(manifest, mods, o, need_clip, need_segment);
    for (size_t i = 0; i < mods.size(); ++i) {
        if (need_clip) {
            const std::string rel = "features/" + std::string(to_string(mods[i])) + ".clip.avfc";
            write_cache(bundle.clip_tables[i], o.out_dir + "/" + rel);
            rec.add_artifact(rel);
        }
        if (need_segment) {
            const std::string rel =
                "features/" + std::string(to_string(mods[i])) + ".segment.avfc";
            write_cache(bundle.segment_tables[i], o.out_dir + "/" + rel);
            rec.add_artifact(rel);
        }
    }
    rec.metrics["clips"] = manifest.clips.size();
    rec.commit();
    std::cout << "extracted features for " << mods.size() << " modalities into "
              << o.out_dir << "/features\n";
    return 0;
}

int cmd_train(const CommonOptions& o) {
    const DatasetManifest manifest = load_manifest(o.manifest_path);
    const auto mods = parse_modalities(o.modalities_csv);
    const ClassifierConfig cfg = build_classifier_config(o, mods);

    RunRecorder rec;
    rec.out_dir = o.out_dir;
    rec.command = "train";
    rec.config = ordered_json::parse(cfg.to_json());
    rec.config["manifest"] = o.manifest_path;
    rec.config["encoder_seed"] = o.encoder_seed;
    rec.config["dim"] = o.dim;
    rec.config["encoder_mode"] = o.encoder_mode;
    rec.seed = o.seed;
    ensure_dir(o.out_dir);
    if (resume_hit(rec, o.resume)) return 0;

    const bool temporal = cfg.kind == ClassifierKind::temporal;
    const FeatureBundle features =
        load_or_mock_features(manifest, mods, o, !temporal, temporal);
    const TrainedModel model = run_training(manifest, features, cfg);
    save_checkpoint(model, o.out_dir + "/model.avcp");
    rec.add_artifact("model.avcp");

    const EvalReport report = run_eval(model, manifest, features, resolve_split(o.split));
    write_text(o.out_dir + "/eval_report.json", report.to_json());
    rec.add_artifact("eval_report.json");
    const std::vector<ReportEntry> entries = {{report.modalities, report}};
    write_text(o.out_dir + "/eval_report.csv", emit_table2(entries, ReportFormat::csv));
    write_text(o.out_dir + "/eval_report.md", emit_table2(entries, ReportFormat::markdown));
    rec.add_artifact("eval_report.csv");
    rec.add_artifact("eval_report.md");

    rec.metrics["macro_f1"] = report.macro_f1;
    ordered_json per_class = ordered_json::array();
    for (const auto& m : report.per_class) per_class.push_back(m.f1);
    rec.metrics["per_class_f1"] = per_class;
    rec.metrics["final_train_loss"] = model.log.empty() ? 0.0 : model.log.back().loss;
    rec.commit();
    std::cout << "trained " << to_string(cfg.kind) << " model; " << o.split
              << " macro-F1 = " << report.macro_f1 * 100.0 << "%\n";
    return 0;
}

int cmd_eval(const CommonOptions& o, const std::string& checkpoint_path) {
    const DatasetManifest manifest = load_manifest(o.manifest_path);
    const TrainedModel model = load_checkpoint(checkpoint_path);
    CommonOptions local = o;
    local.dim = o.dim;

    RunRecorder rec;
    rec.out_dir = o.out_dir;
    rec.command = "eval";
    rec.config = ordered_json::parse(model.config.to_json());
    rec.config["manifest"] = o.manifest_path;
    rec.config["checkpoint"] = checkpoint_path;
    rec.config["split"] = o.split;
    rec.seed = o.seed;
    ensure_dir(o.out_dir);
    if (resume_hit(rec, o.resume)) return 0;

    const bool temporal = model.config.kind == ClassifierKind::temporal;
    const FeatureBundle features =
        load_or_mock_features(manifest, model.config.modalities, local, !temporal, temporal);
    const EvalReport report = run_eval(model, manifest, features, resolve_split(o.split));
    write_text(o.out_dir + "/eval_report.json", report.to_json());
    rec.add_artifact("eval_report.json");
    rec.metrics["macro_f1"] = report.macro_f1;
    rec.commit();
    std::cout << o.split << " macro-F1 = " << report.macro_f1 * 100.0 << "%\n";
    return 0;
}

int cmd_zero_shot(const CommonOptions& o) {
    const DatasetManifest manifest = load_manifest(o.manifest_path);
    const Split split = resolve_split(o.split);
    const PromptTemplate tmpl = resolve_template(o);
    const Sidecar sidecar = resolve_sidecar(o, manifest);

    RunRecorder rec;
    rec.out_dir = o.out_dir;
    rec.command = "zero-shot";
    rec.config = options_json(o, parse_modalities(o.modalities_csv), "zero-shot");
    rec.config["client"] = o.client_name;
    rec.config["split"] = o.split;
    rec.seed = o.seed;
    ensure_dir(o.out_dir);
    if (resume_hit(rec, o.resume)) return 0;

    ClientHolder step1 = make_client(o, o.client_name);
    ClientHolder step2_holder;
    MllmClient* step2 = step1.get();
    if (!o.step2_client_name.empty() && o.step2_client_name != o.client_name) {
        step2_holder = make_client(o, o.step2_client_name);
        step2 = step2_holder.get();
    }

    const CompositeSet composites = write_composites(manifest, split, o.out_dir);
    std::vector<const ClipRecord*> clips;
    for (const auto& c : manifest.clips) {
        if (c.split == split) clips.push_back(&c);
    }

    struct ClipOutcome {
        TwoStepResult steps;
        LabelMask predicted;
        std::string prompt;
    };
    std::vector<ClipOutcome> outcomes(clips.size());
    parallel_for(clips.size(), o.workers, [&](size_t i) {
        const ClipRecord& clip = *clips[i];
        SidecarEntry side;
        auto it = sidecar.find(clip.clip_id);
        if (it != sidecar.end()) side = it->second;
        const PromptBundle bundle =
            build_prompt(tmpl, side.audio_caption, side.speech_transcript);
        const Image& image = composites.images.at(clip.clip_id);
        ClipOutcome& out = outcomes[i];
        out.prompt = bundle.augmented;
        try {
            out.steps = two_step_infer(*step1.get(), *step2, image, bundle, tmpl);
            out.predicted = extract_labels(out.steps.label_line);
        } catch (const TransportError& e) {
            out.steps.free_text = "";
            out.steps.label_line = std::string("transport failure: ") + e.what();
            out.predicted = LabelMask();  // scored all-negative
        }
    });

    PredictionMatrix matrix;
    std::string responses;
    for (size_t i = 0; i < clips.size(); ++i) {
        const ClipRecord& clip = *clips[i];
        matrix.clip_ids.push_back(clip.clip_id);
        std::array<bool, kNumCategories> truth_row{};
        std::array<bool, kNumCategories> pred_row{};
        for (int c = 0; c < kNumCategories; ++c) {
            truth_row[static_cast<size_t>(c)] = clip.labels.contains(c);
            pred_row[static_cast<size_t>(c)] = outcomes[i].predicted.contains(c);
        }
        matrix.truth.push_back(truth_row);
        matrix.pred.push_back(pred_row);
        ordered_json line;
        line["clip_id"] = clip.clip_id;
        line["image"] = composites.relative_paths.at(clip.clip_id);
        line["free_text"] = outcomes[i].steps.free_text;
        line["label_line"] = outcomes[i].steps.label_line;
        line["predicted"] = outcomes[i].predicted.names();
        line["truth"] = clip.labels.names();
        responses += line.dump();
        responses += '\n';
    }
    write_text(o.out_dir + "/responses.jsonl", responses);
    rec.add_artifact("responses.jsonl");

    EvalReport report = evaluate(matrix);
    report.model = "zero-shot:" + o.client_name;
    report.modalities = "V" + std::string(o.sidecar_path.empty() ? "" : "+A+S");
    report.fusion = "prompt";
    write_text(o.out_dir + "/eval_report.json", report.to_json());
    rec.add_artifact("eval_report.json");
    rec.metrics["macro_f1"] = report.macro_f1;
    rec.metrics["clips"] = clips.size();
    rec.commit();
    std::cout << "zero-shot macro-F1 = " << report.macro_f1 * 100.0 << "% over "
              << clips.size() << " clips\n";
    return 0;
}

int cmd_instruct(const CommonOptions& o, const std::string& what,
                 const std::string& posthoc_in) {
    const DatasetManifest manifest = load_manifest(o.manifest_path);
    const Split split = resolve_split(o.split);
    const PromptTemplate tmpl = resolve_template(o);
    const Sidecar sidecar = resolve_sidecar(o, manifest);

    RunRecorder rec;
    rec.out_dir = o.out_dir;
    rec.command = "instruct-" + what;
    rec.config = options_json(o, parse_modalities(o.modalities_csv), "instruct");
    rec.config["what"] = what;
    rec.config["split"] = o.split;
    rec.seed = o.seed;
    ensure_dir(o.out_dir);
    if (resume_hit(rec, o.resume)) return 0;

    if (what == "ad-hoc") {
        if (posthoc_in.empty()) throw ConfigError("ad-hoc requires --posthoc FILE");
        const auto records = load_posthoc_jsonl(posthoc_in);
        const AdHocBuildResult result = build_adhoc_pairs(records, tmpl);
        write_text(o.out_dir + "/adhoc_pairs.jsonl", conversation_jsonl(result.pairs));
        write_text(o.out_dir + "/finetune_recipe.json", finetune_recipe_json());
        rec.add_artifact("adhoc_pairs.jsonl");
        rec.add_artifact("finetune_recipe.json");
        rec.metrics["pairs"] = result.pairs.size();
        rec.metrics["skipped"] = result.skipped.size();
        rec.commit();
        std::cout << "wrote " << result.pairs.size() << " ad-hoc pairs ("
                  << result.skipped.size() << " skipped)\n";
        return 0;
    }

    const CompositeSet composites = write_composites(manifest, split, o.out_dir);
    const ImagePathResolver image_path = [&](const ClipRecord& clip) {
        auto it = composites.relative_paths.find(clip.clip_id);
        return it == composites.relative_paths.end() ? std::string() : it->second;
    };

    if (what == "pairs") {
        const InstructionBuildResult result =
            build_instruction_pairs(manifest, split, tmpl, sidecar, image_path);
        write_text(o.out_dir + "/instruct_pairs.jsonl", conversation_jsonl(result.pairs));
        write_text(o.out_dir + "/finetune_recipe.json", finetune_recipe_json());
        rec.add_artifact("instruct_pairs.jsonl");
        rec.add_artifact("finetune_recipe.json");
        rec.metrics["pairs"] = result.pairs.size();
        rec.metrics["skipped"] = result.skipped.size();
        rec.commit();
        std::cout << "wrote " << result.pairs.size() << " instruction pairs ("
                  << result.skipped.size() << " skipped)\n";
        return 0;
    }
    if (what == "post-hoc") {
        ClientHolder client = make_client(
            o, o.client_name == "mock" ? std::string("mock-echo") : o.client_name);
        const auto image_for = [&](const ClipRecord& clip) -> const Image* {
            auto it = composites.images.find(clip.clip_id);
            return it == composites.images.end() ? nullptr : &it->second;
        };
        const PostHocBuildResult result = generate_posthoc(
            *client.get(), manifest, split, tmpl, sidecar, image_path, image_for);
        write_text(o.out_dir + "/posthoc.jsonl", posthoc_jsonl(result.records));
        rec.add_artifact("posthoc.jsonl");
        rec.metrics["records"] = result.records.size();
        rec.metrics["skipped"] = result.skipped.size();
        rec.commit();
        std::cout << "wrote " << result.records.size() << " post-hoc records ("
                  << result.skipped.size() << " skipped)\n";
        return 0;
    }
    throw ConfigError("instruct build target must be pairs | post-hoc | ad-hoc");
}

int cmd_report(const CommonOptions& o, const std::string& layout_text,
               const std::string& ledger_path, const std::string& format_text) {
    const auto entries = read_ledger(ledger_path);
    if (entries.empty()) throw Error("ledger " + ledger_path + " has no entries");
    ensure_dir(o.out_dir);

    const bool want_csv = format_text == "csv" || format_text == "both";
    const bool want_md = format_text == "markdown" || format_text == "both";
    auto emit_both = [&](const std::string& stem, auto&& emit_fn) {
        if (want_csv) write_text(o.out_dir + "/" + stem + ".csv", emit_fn(ReportFormat::csv));
        if (want_md) {
            write_text(o.out_dir + "/" + stem + ".md", emit_fn(ReportFormat::markdown));
        }
    };

    if (layout_text == "table2") {
        std::vector<ReportEntry> rows;
        for (const auto& e : entries) {
            if (!e.metrics.contains("macro_f1")) continue;
            ReportEntry row;
            row.label = e.config.value("model", e.command) + " (" +
                        e.config.value("modalities", "?") + ", " +
                        e.config.value("fusion", "-") + ")";
            row.report.macro_f1 = e.metrics["macro_f1"].get<double>();
            rows.push_back(row);
        }
        if (rows.empty()) throw Error("no entries with macro_f1 in ledger");
        emit_both("table2", [&](ReportFormat f) { return emit_table2(rows, f); });
    } else if (layout_text == "table3") {
        const LedgerEntry* sweep = nullptr;
        for (auto it = entries.rbegin(); it != entries.rend(); ++it) {
            if (it->command == "sweep" && it->metrics.contains("grid")) {
                sweep = &*it;
                break;
            }
        }
        if (sweep == nullptr) throw Error("no sweep entry with a grid in ledger");
        Table3Grid grid;
        for (const auto& c : sweep->metrics["grid"]["columns"]) grid.columns.push_back(c);
        for (const auto& r : sweep->metrics["grid"]["rows"]) grid.rows.push_back(r);
        for (const auto& row : sweep->metrics["grid"]["values"]) {
            grid.values.push_back(row.get<std::vector<double>>());
        }
        emit_both("table3", [&](ReportFormat f) { return emit_table3(grid, f); });
    } else if (layout_text == "table4") {
        std::vector<ReportEntry> columns;
        for (const auto& e : entries) {
            if (!e.metrics.contains("per_class_f1")) continue;
            ReportEntry col;
            col.label = e.config.value("modalities", "?");
            const auto f1s = e.metrics["per_class_f1"].get<std::vector<double>>();
            for (int c = 0; c < kNumCategories && c < static_cast<int>(f1s.size()); ++c) {
                col.report.per_class[static_cast<size_t>(c)].f1 = f1s[static_cast<size_t>(c)];
            }
            col.report.macro_f1 = e.metrics.value("macro_f1", 0.0);
            columns.push_back(col);
        }
        if (columns.empty()) throw Error("no entries with per_class_f1 in ledger");
        emit_both("table4", [&](ReportFormat f) { return emit_table4(columns, f); });
    } else {
        throw ConfigError("report layout must be table2 | table3 | table4");
    }
    std::cout << "wrote " << layout_text << " report to " << o.out_dir << "\n";
    return 0;
}

int cmd_sweep(const CommonOptions& o) {
    const DatasetManifest manifest = load_manifest(o.manifest_path);
    const auto all_mods = parse_modalities(o.modalities_csv);

    RunRecorder rec;
    rec.out_dir = o.out_dir;
    rec.command = "sweep";
    rec.config = options_json(o, all_mods);
    rec.seed = o.seed;
    ensure_dir(o.out_dir);
    if (resume_hit(rec, o.resume)) return 0;

    // All non-empty subsets in (audio, visual, speech) order.
    std::vector<std::vector<Modality>> subsets;
    const size_t n = all_mods.size();
    for (size_t mask = 1; mask < (1u << n); ++mask) {
        std::vector<Modality> subset;
        for (size_t i = 0; i < n; ++i) {
            if (mask & (1u << i)) subset.push_back(all_mods[i]);
        }
        subsets.push_back(subset);
    }
    std::sort(subsets.begin(), subsets.end(),
              [](const auto& a, const auto& b) { return a.size() < b.size(); });

    Table3Grid grid;
    grid.columns = {"Average", "Max", "Concat"};
    for (size_t i = 0; i < n; ++i) {
        std::string boosted;
        for (size_t j = 0; j < n; ++j) {
            if (!boosted.empty()) boosted += ":";
            boosted += (i == j) ? "2" : "1";
        }
        std::string letters;
        for (Modality m : all_mods) {
            if (!letters.empty()) letters += ":";
            letters += std::string(1, std::string(to_string(m))[0]);
        }
        grid.columns.push_back("(" + letters + " = " + boosted + ")");
    }

    ordered_json failures = ordered_json::array();
    for (const auto& subset : subsets) {
        grid.rows.push_back(modality_label(subset));
        std::vector<double> row(grid.columns.size(), -1.0);

        auto run_cell = [&](const FusionSpec& fusion, size_t col) {
            try {
                CommonOptions cell = o;
                ClassifierConfig cfg = build_classifier_config(cell, subset);
                cfg.fusion = fusion;
                const bool temporal = cfg.kind == ClassifierKind::temporal;
                const FeatureBundle features =
                    load_or_mock_features(manifest, subset, cell, !temporal, temporal);
                const TrainedModel model = run_training(manifest, features, cfg);
                const EvalReport report =
                    run_eval(model, manifest, features, resolve_split(o.split));
                row[col] = report.macro_f1 * 100.0;
            } catch (const std::exception& e) {
                failures.push_back({{"row", grid.rows.back()},
                                    {"column", grid.columns[col]},
                                    {"error", e.what()}});
            }
        };

        if (subset.size() == 1) {
            run_cell(FusionSpec{FusionMethod::average, {}}, 0);
        } else {
            run_cell(FusionSpec{FusionMethod::average, {}}, 0);
            run_cell(FusionSpec{FusionMethod::max, {}}, 1);
            run_cell(FusionSpec{FusionMethod::concat, {}}, 2);
            if (subset.size() == n) {
                for (size_t i = 0; i < n; ++i) {
                    FusionSpec spec;
                    spec.method = FusionMethod::weighted;
                    spec.weights.assign(n, 1.0);
                    spec.weights[i] = 2.0;
                    run_cell(spec, 3 + i);
                }
            }
        }
        grid.values.push_back(row);
    }

    write_text(o.out_dir + "/table3.csv", emit_table3(grid, ReportFormat::csv));
    write_text(o.out_dir + "/table3.md", emit_table3(grid, ReportFormat::markdown));
    rec.add_artifact("table3.csv");
    rec.add_artifact("table3.md");
    ordered_json grid_json;
    grid_json["rows"] = grid.rows;
    grid_json["columns"] = grid.columns;
    grid_json["values"] = grid.values;
    rec.metrics["grid"] = grid_json;
    rec.metrics["failures"] = failures;
    rec.commit();
    std::cout << "sweep complete: " << grid.rows.size() << " rows, "
              << failures.size() << " failed cells\n";
    return 0;
}

}  // namespace

int run(const std::vector<std::string>& args) {
    CLI::App app{"audio-visual behavior recognition benchmark pipeline"};
    app.require_subcommand(1);
    CommonOptions o;

    // synth
    auto* synth = app.add_subcommand("synth", "Write a synthetic manifest");
    std::string counts_csv, fractions_csv, duration_text, manifest_out = "manifest.jsonl";
    std::string sidecar_out;
    int total = 0;
    synth->add_option("--out", manifest_out, "Manifest output path");
    synth->add_option("--seed", o.seed, "Synthesis seed");
    synth->add_option("--counts", counts_csv, "10 per-category counts");
    synth->add_option("--total", total, "Total clip count");
    synth->add_option("--fractions", fractions_csv, "train,val,test fractions");
    synth->add_option("--duration", duration_text, "stats | const:<seconds>");
    synth->add_option("--sidecar-out", sidecar_out, "Also write a synthetic AC/ST sidecar");

    // validate
    auto* validate = app.add_subcommand("validate", "Manifest statistics and checks");
    bool strict = false;
    std::string report_out;
    add_manifest_flags(validate, o);
    validate->add_flag("--strict", strict, "Exit 1 when any check fails");
    validate->add_option("--report", report_out, "Write the JSON report here");

    // extract
    auto* extract = app.add_subcommand("extract", "Extract features into caches");
    std::string level_text = "both";
    add_manifest_flags(extract, o);
    add_feature_flags(extract, o);
    extract->add_option("--level", level_text, "clip | segment | both");

    // train
    auto* train = app.add_subcommand("train", "Train a classifier and evaluate it");
    add_manifest_flags(train, o);
    add_feature_flags(train, o);
    add_model_flags(train, o);
    train->add_option("--split", o.split, "Evaluation split");

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "Evaluate a saved checkpoint");
    std::string checkpoint_path;
    add_manifest_flags(eval_cmd, o);
    add_feature_flags(eval_cmd, o);
    eval_cmd->add_option("--checkpoint", checkpoint_path, "Checkpoint path")->required();
    eval_cmd->add_option("--split", o.split, "Evaluation split");

    // zero-shot
    auto* zero = app.add_subcommand("zero-shot", "Two-step prompting over a split");
    add_manifest_flags(zero, o);
    add_client_flags(zero, o);
    zero->add_option("--split", o.split, "Split to run");

    // instruct build {pairs|post-hoc|ad-hoc}
    auto* instruct = app.add_subcommand("instruct", "Instruction-data generation");
    auto* build = instruct->add_subcommand("build", "Build instruction data");
    build->require_subcommand(1);
    std::string posthoc_in;
    for (const char* what : {"pairs", "post-hoc", "ad-hoc"}) {
        auto* sub = build->add_subcommand(what, std::string("Build ") + what);
        add_manifest_flags(sub, o);
        add_client_flags(sub, o);
        sub->add_option("--split", o.split, "Split to build from");
        if (std::string(what) == "ad-hoc") {
            sub->add_option("--posthoc", posthoc_in, "posthoc.jsonl input")->required();
        }
    }

    // report
    auto* report = app.add_subcommand("report", "Emit a results table from the ledger");
    std::string layout_text, ledger_path, format_text = "both";
    report->add_option("layout", layout_text, "table2 | table3 | table4")->required();
    report->add_option("--ledger", ledger_path, "Results ledger path")->required();
    report->add_option("--format", format_text, "csv | markdown | both");
    report->add_option("--out", o.out_dir, "Output directory");

    // sweep
    auto* sweep = app.add_subcommand("sweep", "Modality x fusion grid");
    add_manifest_flags(sweep, o);
    add_feature_flags(sweep, o);
    add_model_flags(sweep, o);
    sweep->add_option("--split", o.split, "Evaluation split");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp& e) {
        std::cout << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n" << app.help();
        return 2;
    }

    try {
        if (synth->parsed()) {
            return cmd_synth(o, counts_csv, total, fractions_csv, duration_text,
                             manifest_out, sidecar_out);
        }
        if (validate->parsed()) return cmd_validate(o, strict, report_out);
        if (extract->parsed()) return cmd_extract(o, level_text);
        if (train->parsed()) return cmd_train(o);
        if (eval_cmd->parsed()) return cmd_eval(o, checkpoint_path);
        if (zero->parsed()) return cmd_zero_shot(o);
        if (instruct->parsed()) {
            for (const char* what : {"pairs", "post-hoc", "ad-hoc"}) {
                if (build->get_subcommand(what)->parsed()) {
                    return cmd_instruct(o, what, posthoc_in);
                }
            }
            throw ConfigError("instruct build requires a target");
        }
        if (report->parsed()) return cmd_report(o, layout_text, ledger_path, format_text);
        if (sweep->parsed()) return cmd_sweep(o);
        throw ConfigError("no subcommand given");
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace avbr::cli
