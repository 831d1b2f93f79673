#pragma once

#include <filesystem>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "godiff/config.hpp"
#include "godiff/csn.hpp"
#include "godiff/dataset.hpp"
#include "godiff/dataset_io.hpp"
#include "godiff/io.hpp"
#include "godiff/metrics.hpp"
#include "godiff/object_filter.hpp"
#include "godiff/parallel.hpp"
#include "godiff/prompt.hpp"
#include "godiff/ptdg.hpp"

// End-to-end orchestration. Each command reads its inputs from and writes its
// outputs under PipelineConfig::out_dir:
//
//   source.json                       synth
//   generated/<domain>.json           generate
//   generated/manifest.json           generate
//   filter/pseudo_source.json         filter
//   filter/<domain>.json              filter
//   filter/filter_report.csv          filter
//   train_sim/report.csv              train-sim
//   train_sim/summary.json            train-sim
//   eval/report.json, eval/report.csv eval
//   mmd/<a>__<b>.csv                  mmd
//
// All outputs are pure functions of the config (including seed); the worker
// count changes only wall time.

namespace godiff {

inline constexpr int kReportSchemaVersion = 1;

struct Paths {
    std::filesystem::path root;

    std::filesystem::path source() const { return root / "source.json"; }
    std::filesystem::path generated_dir() const { return root / "generated"; }
    std::filesystem::path generated(const std::string& d) const { return generated_dir() / (d + ".json"); }
    std::filesystem::path manifest() const { return generated_dir() / "manifest.json"; }
    std::filesystem::path filter_dir() const { return root / "filter"; }
    std::filesystem::path pseudo_source() const { return filter_dir() / "pseudo_source.json"; }
    std::filesystem::path filtered(const std::string& d) const { return filter_dir() / (d + ".json"); }
    std::filesystem::path filter_report() const { return filter_dir() / "filter_report.csv"; }
    std::filesystem::path train_dir() const { return root / "train_sim"; }
    std::filesystem::path train_report() const { return train_dir() / "report.csv"; }
    std::filesystem::path train_summary() const { return train_dir() / "summary.json"; }
    std::filesystem::path eval_dir() const { return root / "eval"; }
    std::filesystem::path mmd_dir() const { return root / "mmd"; }
};

inline GeneratorConfig generator_config(const PipelineConfig& cfg) {
    GeneratorConfig g;
    g.generator_id = cfg.generator_id;
    g.seed = cfg.seed;
    return g;
}

// ---------------------------------------------------------------------------
// synth

inline std::filesystem::path cmd_synth(const PipelineConfig& cfg, std::vector<std::string>* warnings = nullptr) {
    SynthParams p = cfg.synth;
    p.seed = cfg.seed;
    const auto ds = synth_toy_dataset(p, warnings);
    ensure_directory(cfg.out_dir);
    const auto path = cfg.source_path.value_or(Paths{cfg.out_dir}.source());
    if (path.has_parent_path()) ensure_directory(path.parent_path());
    save_dataset(ds, path);
    return path;
}

// ---------------------------------------------------------------------------
// generate

inline nlohmann::json record_to_json(const GenerationRecord& r) {
    return {{"image_id", r.image_id},
            {"source_image_id", r.source_image_id},
            {"domain", r.domain},
            {"image_seed", r.image_seed},
            {"tags", r.tags},
            {"global_prompt", r.global_prompt},
            {"instance_seeds", r.instance_seeds},
            {"instance_prompts", r.instance_prompts}};
}

inline GenerationRecord record_from_json(const nlohmann::json& j) {
    GenerationRecord r;
    try {
        r.image_id = j.at("image_id").get<std::string>();
        r.source_image_id = j.at("source_image_id").get<std::string>();
        r.domain = j.at("domain").get<std::string>();
        r.image_seed = j.at("image_seed").get<std::uint64_t>();
        r.tags = j.at("tags").get<std::vector<std::string>>();
        r.global_prompt = j.at("global_prompt").get<std::string>();
        r.instance_seeds = j.at("instance_seeds").get<std::vector<std::uint64_t>>();
        r.instance_prompts = j.at("instance_prompts").get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("manifest record: ") + e.what());
    }
    return r;
}

struct GenerateOutput {
    std::vector<std::filesystem::path> dataset_files;
    std::filesystem::path manifest;
};

inline GenerateOutput cmd_generate(const PipelineConfig& cfg) {
    const Paths paths{cfg.out_dir};
    const auto source = load_dataset(cfg.source_file());
    const auto generator = make_generator(cfg.generator_id);
    ensure_directory(paths.generated_dir());

    GenerationOptions opts;
    opts.images_per_source = cfg.images_per_source;
    opts.threads = cfg.threads;

    std::vector<DomainDataset> outputs(cfg.domains.size());
    std::vector<std::vector<GenerationRecord>> records(cfg.domains.size());
    // Domains in parallel on top of the per-image parallelism would
    // oversubscribe; images are the finer grain.
    for (std::size_t d = 0; d < cfg.domains.size(); ++d) {
        outputs[d] = generate_pseudo_domain(source, cfg.domains[d], cfg.descriptors, *generator, generator_config(cfg),
                                            opts, &records[d]);
    }

    GenerateOutput out;
    nlohmann::json domains = nlohmann::json::array();
    for (std::size_t d = 0; d < cfg.domains.size(); ++d) {
        const auto& spec = cfg.domains[d];
        const auto path = paths.generated(spec.name);
        save_dataset(outputs[d], path);
        out.dataset_files.push_back(path);
        nlohmann::json recs = nlohmann::json::array();
        for (const auto& r : records[d]) recs.push_back(record_to_json(r));
        domains.push_back({{"name", spec.name},
                           {"tags", spec.domain_tags.tags()},
                           {"style", style_to_parameters(spec.style)},
                           {"images", std::move(recs)}});
    }
    const nlohmann::json manifest{{"schema_version", kReportSchemaVersion},
                                  {"seed", cfg.seed},
                                  {"generator", cfg.generator_id},
                                  {"source", source.domain},
                                  {"domains", std::move(domains)}};
    out.manifest = paths.manifest();
    write_text_file(out.manifest, manifest.dump(1) + "\n");
    return out;
}

// ---------------------------------------------------------------------------
// filter

struct FilterRow {
    std::string image_id;
    std::size_t box_index = 0;
    double similarity = 0.0;
    bool retained = false;
};

inline std::string filter_report_csv(const std::vector<FilterRow>& rows) {
    std::string out = "schema_version,image_id,box_index,similarity,retained\n";
    for (const auto& r : rows) {
        out += std::to_string(kReportSchemaVersion) + "," + r.image_id + "," + std::to_string(r.box_index) + "," +
               format_double(r.similarity) + "," + (r.retained ? "1" : "0") + "\n";
    }
    return out;
}

struct FilterOutput {
    std::vector<FilterRow> rows;
    std::vector<std::filesystem::path> dataset_files;
    std::filesystem::path report;
};

inline FilterOutput cmd_filter(const PipelineConfig& cfg) {
    const Paths paths{cfg.out_dir};
    const auto source = load_dataset(cfg.source_file());
    const auto generator = make_generator(cfg.generator_id);
    const auto embedder = make_embedder(cfg.embedder_id);
    ensure_directory(paths.filter_dir());

    GenerationOptions opts;
    opts.threads = cfg.threads;
    const auto pseudo_source = build_pseudo_source(source, cfg.descriptors, *generator, generator_config(cfg), opts);
    save_dataset(pseudo_source, paths.pseudo_source());

    std::vector<std::vector<double>> sims(source.images.size());
    parallel_for(source.images.size(), cfg.threads, [&](std::size_t i) {
        sims[i] = box_similarities(source.images[i], pseudo_source.images[i], cfg.filter.gamma, *embedder);
    });

    FilterOutput out;
    std::map<std::string, std::vector<Annotation>> retained;
    for (std::size_t i = 0; i < source.images.size(); ++i) {
        const auto& img = source.images[i];
        auto& keep = retained[img.id];
        for (std::size_t b = 0; b < sims[i].size(); ++b) {
            const bool r = retains(sims[i][b], cfg.filter.tau, cfg.filter.mode);
            if (r) keep.push_back(img.annotations[b]);
            out.rows.push_back({img.id, b, sims[i][b], r});
        }
    }

    std::vector<DomainDataset> generated;
    for (const auto& spec : cfg.domains) generated.push_back(load_dataset(paths.generated(spec.name)));
    const auto filtered = apply_filter_to_domains(generated, retained);
    for (const auto& ds : filtered) {
        const auto path = paths.filtered(ds.domain);
        save_dataset(ds, path);
        out.dataset_files.push_back(path);
    }
    out.report = paths.filter_report();
    write_text_file(out.report, filter_report_csv(out.rows));
    return out;
}

// ---------------------------------------------------------------------------
// train-sim

struct TrainStep {
    int step = 0;
    std::vector<std::string> batch_ids;
    ForwardResult forward;
};

struct TrainSimOutput {
    std::vector<TrainStep> steps;
    double grad_check_max_rel_error = 0.0;
    std::filesystem::path report;
    std::filesystem::path summary;
};

/// Filtered pseudo-domains when present, raw generated ones otherwise.
inline std::vector<DomainDataset> load_pseudo_domains(const PipelineConfig& cfg) {
    const Paths paths{cfg.out_dir};
    std::vector<DomainDataset> out;
    for (const auto& spec : cfg.domains) {
        const auto filtered = paths.filtered(spec.name);
        out.push_back(load_dataset(std::filesystem::exists(filtered) ? filtered : paths.generated(spec.name)));
    }
    return out;
}

inline std::string mask_string(const std::vector<bool>& mask) {
    std::string s;
    for (bool b : mask) s += b ? '1' : '0';
    return s;
}

inline std::string train_report_csv(const std::vector<TrainStep>& steps, double grad_check) {
    std::string out = "schema_version,step,batch,mask,pair_losses,total_cml,grad_check_max_rel_error\n";
    for (const auto& s : steps) {
        std::string batch, losses;
        for (std::size_t i = 0; i < s.batch_ids.size(); ++i) batch += (i ? ";" : "") + s.batch_ids[i];
        for (std::size_t i = 0; i < s.forward.losses.size(); ++i) {
            const auto& l = s.forward.losses[i];
            losses += (i ? ";" : "") + std::string("L") + std::to_string(l.layer) + ":" + std::to_string(l.a) + "-" +
                      std::to_string(l.b) + "=" + format_double(l.loss);
        }
        out += std::to_string(kReportSchemaVersion) + "," + std::to_string(s.step) + "," + batch + "," +
               mask_string(s.forward.active) + "," + losses + "," +
               (s.forward.total_cml ? format_double(*s.forward.total_cml) : std::string()) + "," +
               format_double(grad_check) + "\n";
    }
    return out;
}

/// Gradient check on deep features of the first pair in the first batch;
/// falls back to seeded random maps when those coincide.
inline double train_sim_grad_check(const PipelineConfig& cfg, const std::vector<FeatureMap>& batch) {
    if (batch.size() >= 2) {
        const ToyBackbone net(derive_seed(cfg.seed, stable_hash("weights")), batch[0].channels);
        FeatureMap a = batch[0], b = batch[1];
        for (int l = 0; l < net.layer_count(); ++l) {
            a = net.apply_layer(l, a);
            b = net.apply_layer(l, b);
        }
        if (cml_loss(a, b).loss > 1e-6) return finite_diff_check(a, b, cfg.grad_check_step);
    }
    CounterStream rng(derive_seed(cfg.seed, stable_hash("grad-check")));
    FeatureMap a(4, 3, 3), b(4, 3, 3);
    for (auto& v : a.values) v = rng.normal();
    for (auto& v : b.values) v = rng.normal();
    return finite_diff_check(a, b, cfg.grad_check_step);
}

inline TrainSimOutput cmd_train_sim(const PipelineConfig& cfg) {
    if (cfg.batch_size < 2 || cfg.batch_size % 2 != 0) {
        throw ValidationError("csn.batch_size: must be even and >= 2, got " + std::to_string(cfg.batch_size));
    }
    const Paths paths{cfg.out_dir};
    std::vector<DomainDataset> parts{load_dataset(cfg.source_file())};
    for (auto& d : load_pseudo_domains(cfg)) parts.push_back(std::move(d));
    const DomainDataset merged = merge_datasets(parts);
    if (merged.images.size() < static_cast<std::size_t>(cfg.batch_size)) {
        throw ValidationError("train-sim: merged dataset has " + std::to_string(merged.images.size()) +
                              " images, fewer than csn.batch_size");
    }
    ensure_directory(paths.train_dir());

    const std::uint64_t weights_seed = derive_seed(cfg.seed, stable_hash("weights"));
    TrainSimOutput out;
    out.steps.resize(static_cast<std::size_t>(cfg.steps));
    std::vector<std::vector<FeatureMap>> batches(out.steps.size());

    parallel_for(out.steps.size(), cfg.threads, [&](std::size_t s) {
        // Partial Fisher-Yates: the first batch_size slots form the batch.
        std::vector<std::size_t> idx(merged.images.size());
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        const CounterRng rng(derive_seed(cfg.seed, stable_hash("train-batch"), s));
        for (std::size_t i = 0; i < static_cast<std::size_t>(cfg.batch_size); ++i) {
            std::swap(idx[i], idx[i + rng.index(i, idx.size() - i)]);
        }
        TrainStep& step = out.steps[s];
        step.step = static_cast<int>(s);
        for (int i = 0; i < cfg.batch_size; ++i) {
            const auto& img = merged.images[idx[static_cast<std::size_t>(i)]];
            step.batch_ids.push_back(img.id);
            batches[s].push_back(raster_to_feature_map(img.raster));
        }
        step.forward = toy_backbone_forward(batches[s], weights_seed, cfg.csn,
                                            derive_seed(cfg.seed, stable_hash("csn-step"), s));
    });
    out.grad_check_max_rel_error = train_sim_grad_check(cfg, batches.front());

    out.report = paths.train_report();
    write_text_file(out.report, train_report_csv(out.steps, out.grad_check_max_rel_error));

    std::size_t active_total = 0;
    double cml_total = 0.0;
    for (const auto& s : out.steps) {
        for (bool b : s.forward.active) active_total += b;
        cml_total += s.forward.total_cml.value_or(0.0);
    }
    const nlohmann::json summary{{"schema_version", kReportSchemaVersion},
                                 {"steps", cfg.steps},
                                 {"batch_size", cfg.batch_size},
                                 {"merged_images", merged.images.size()},
                                 {"csn_probability", cfg.csn.probability},
                                 {"csn_max_active", cfg.csn.max_active},
                                 {"active_layers_total", active_total},
                                 {"cml_total", cml_total},
                                 {"grad_check_max_rel_error", out.grad_check_max_rel_error}};
    out.summary = paths.train_summary();
    write_text_file(out.summary, summary.dump(1) + "\n");
    return out;
}

// ---------------------------------------------------------------------------
// eval

/// One JSON object per line: {"image_id", "category", "bbox", "confidence"}.
inline std::vector<Detection> parse_detections(const std::string& text) {
    std::vector<Detection> out;
    std::istringstream in(text);
    std::string line;
    for (std::size_t no = 1; std::getline(in, line); ++no) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const std::string where = "detections line " + std::to_string(no);
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw ParseError(where + ": malformed JSON: " + e.what());
        }
        Detection d;
        d.image_id = detail::require_string(j, "image_id", where);
        d.category = detail::require_string(j, "category", where);
        const auto& bbox = detail::require_array(j, "bbox", where);
        if (bbox.size() != 4 || !std::all_of(bbox.begin(), bbox.end(), [](const auto& v) { return v.is_number(); })) {
            throw ParseError(where + ".bbox: expected an array of 4 numbers");
        }
        d.box = {bbox[0].get<double>(), bbox[1].get<double>(), bbox[2].get<double>(), bbox[3].get<double>()};
        const auto& conf = detail::require(j, "confidence", where);
        if (!conf.is_number()) throw ParseError(where + ".confidence: expected a number");
        d.confidence = conf.get<double>();
        if (!(d.confidence >= 0.0 && d.confidence <= 1.0)) throw ValidationError(where + ".confidence: outside [0, 1]");
        out.push_back(std::move(d));
    }
    return out;
}

inline std::string detections_jsonl(const std::vector<Detection>& dets) {
    std::string out;
    for (const auto& d : dets) {
        const nlohmann::json j{{"image_id", d.image_id},
                               {"category", d.category},
                               {"bbox", {d.box.x_min, d.box.y_min, d.box.x_max, d.box.y_max}},
                               {"confidence", d.confidence}};
        out += j.dump() + "\n";
    }
    return out;
}

/// Detections derived from ground truth: every box jittered by up to
/// `jitter` pixels, plus one random false positive per image. For exercising
/// the evaluator without a detector.
inline std::vector<Detection> simulate_detections(const std::vector<DomainDataset>& domains, std::uint64_t seed,
                                                  double jitter = 2.0, double miss_rate = 0.1) {
    std::vector<Detection> out;
    for (const auto& ds : domains) {
        for (const auto& img : ds.images) {
            const auto qid = qualified_image_id(ds.domain, img.id);
            CounterStream rng(derive_seed(seed, stable_hash("simulate-detections"), stable_hash(qid)));
            for (const auto& a : img.annotations) {
                const double skip = rng.uniform();
                const double dx0 = rng.uniform(-jitter, jitter), dy0 = rng.uniform(-jitter, jitter);
                const double dx1 = rng.uniform(-jitter, jitter), dy1 = rng.uniform(-jitter, jitter);
                const double conf = rng.uniform(0.5, 1.0);
                if (skip < miss_rate) continue;
                BoundingBox b{a.box.x_min + dx0, a.box.y_min + dy0, a.box.x_max + dx1, a.box.y_max + dy1};
                if (b.x_max <= b.x_min || b.y_max <= b.y_min) b = a.box;
                out.push_back({b, a.category, conf, qid});
            }
            if (!ds.categories.empty()) {
                const double w = img.raster.width, h = img.raster.height;
                const double x = rng.uniform(0.0, w * 0.75), y = rng.uniform(0.0, h * 0.75);
                out.push_back({{x, y, x + w / 4.0, y + h / 4.0}, ds.categories[rng.index(ds.categories.size())],
                               rng.uniform(0.0, 0.7), qid});
            }
        }
    }
    return out;
}

inline nlohmann::json eval_report_json(const EvalReport& r, double iou_threshold, const std::string& source_domain) {
    nlohmann::json j{{"schema_version", kReportSchemaVersion},
                     {"iou_threshold", iou_threshold},
                     {"source_domain", source_domain},
                     {"per_class_ap", r.per_class_ap},
                     {"map", r.map},
                     {"per_domain_map", r.per_domain_map}};
    j["mpc"] = r.mpc ? nlohmann::json(*r.mpc) : nlohmann::json(nullptr);
    return j;
}

inline std::string eval_report_csv(const EvalReport& r) {
    std::string out = "schema_version,kind,name,value\n";
    const std::string v = std::to_string(kReportSchemaVersion);
    for (const auto& [c, ap] : r.per_class_ap) out += v + ",class_ap," + c + "," + format_double(ap) + "\n";
    for (const auto& [d, m] : r.per_domain_map) out += v + ",domain_map," + d + "," + format_double(m) + "\n";
    out += v + ",map,all," + format_double(r.map) + "\n";
    out += v + ",mpc,all," + (r.mpc ? format_double(*r.mpc) : std::string()) + "\n";
    return out;
}

/// Source plus every pseudo-domain, as evaluation ground truth.
inline std::vector<DomainDataset> evaluation_domains(const PipelineConfig& cfg) {
    std::vector<DomainDataset> out{load_dataset(cfg.source_file())};
    for (auto& d : load_pseudo_domains(cfg)) out.push_back(std::move(d));
    return out;
}

struct EvalOutput {
    EvalReport report;
    std::filesystem::path json;
    std::filesystem::path csv;
};

inline EvalOutput write_eval_report(const PipelineConfig& cfg, const EvalReport& report) {
    const Paths paths{cfg.out_dir};
    ensure_directory(paths.eval_dir());
    EvalOutput out{report, paths.eval_dir() / "report.json", paths.eval_dir() / "report.csv"};
    write_text_file(out.json, eval_report_json(report, cfg.iou_threshold, cfg.source_domain).dump(1) + "\n");
    write_text_file(out.csv, eval_report_csv(report));
    return out;
}

inline EvalOutput cmd_eval(const PipelineConfig& cfg, const std::filesystem::path& detections_path) {
    const auto dets = parse_detections(read_text_file(detections_path));
    const auto report = evaluate(evaluation_domains(cfg), dets, cfg.iou_threshold, cfg.source_domain);
    return write_eval_report(cfg, report);
}

/// Summarizes externally computed per-domain mAP values (a JSON object
/// domain -> mAP) into mPC without touching any dataset.
inline EvalOutput cmd_eval_domain_map(const PipelineConfig& cfg, const std::filesystem::path& domain_map_path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_text_file(domain_map_path));
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(std::string("domain map: malformed JSON: ") + e.what());
    }
    if (!j.is_object()) throw ParseError("domain map: expected an object of domain -> mAP");
    EvalReport r;
    for (const auto& [k, v] : j.items()) {
        if (!v.is_number()) throw ParseError("domain map." + k + ": expected a number");
        r.per_domain_map[k] = v.get<double>();
    }
    r.mpc = mpc(r.per_domain_map, cfg.source_domain);
    r.map = r.per_domain_map.count(cfg.source_domain) ? r.per_domain_map.at(cfg.source_domain) : *r.mpc;
    return write_eval_report(cfg, r);
}

// ---------------------------------------------------------------------------
// mmd

inline std::vector<Embedding> embed_annotations(const DomainDataset& ds, const Embedder& embedder, std::size_t threads) {
    std::vector<std::pair<std::size_t, std::size_t>> items;
    for (std::size_t i = 0; i < ds.images.size(); ++i) {
        for (std::size_t a = 0; a < ds.images[i].annotations.size(); ++a) items.emplace_back(i, a);
    }
    std::vector<Embedding> out(items.size());
    parallel_for(items.size(), threads, [&](std::size_t k) {
        const auto& img = ds.images[items[k].first];
        out[k] = embed_region(img, img.annotations[items[k].second].box, embedder);
    });
    return out;
}

struct MmdOutput {
    double mmd2 = 0.0;
    std::size_t n_a = 0;
    std::size_t n_b = 0;
    std::filesystem::path csv;
};

inline MmdOutput cmd_mmd(const PipelineConfig& cfg, const std::filesystem::path& domain_a,
                         const std::filesystem::path& domain_b) {
    const auto a = load_dataset(domain_a);
    const auto b = load_dataset(domain_b);
    const auto embedder = make_embedder(cfg.embedder_id);
    const auto ea = embed_annotations(a, *embedder, cfg.threads);
    const auto eb = embed_annotations(b, *embedder, cfg.threads);
    MmdOutput out;
    out.mmd2 = mmd2(ea, eb, cfg.mmd_gamma);
    out.n_a = ea.size();
    out.n_b = eb.size();
    const Paths paths{cfg.out_dir};
    ensure_directory(paths.mmd_dir());
    out.csv = paths.mmd_dir() / (domain_a.stem().string() + "__" + domain_b.stem().string() + ".csv");
    write_text_file(out.csv, "schema_version,domain_a,domain_b,n_a,n_b,gamma,mmd2\n" +
                                 std::to_string(kReportSchemaVersion) + "," + a.domain + "," + b.domain + "," +
                                 std::to_string(out.n_a) + "," + std::to_string(out.n_b) + "," +
                                 format_double(cfg.mmd_gamma) + "," + format_double(out.mmd2) + "\n");
    return out;
}

}  // namespace godiff
