#include <fstream>

#include <gtest/gtest.h>

#include "godiff/pipeline.hpp"
#include "test_util.hpp"

namespace godiff {
namespace {

PipelineConfig small_config(const test::TempDir& dir, const std::string& extra = "") {
    auto cfg = parse_pipeline_config(
        "seed = 11\n"
        "[synth]\nimages = 4\nwidth = 32\nheight = 32\nmin_boxes = 2\nmax_boxes = 3\n"
        "[csn]\nsteps = 2\nbatch_size = 4\n" +
        extra);
    cfg.out_dir = dir.path() / "out";
    return cfg;
}

TEST(Config, DefaultsWhenEmpty) {
    const auto cfg = parse_pipeline_config("");
    EXPECT_EQ(cfg.seed, 7u);
    EXPECT_EQ(cfg.domains.size(), 4u);
    EXPECT_EQ(cfg.filter.tau, 0.8);
    EXPECT_EQ(cfg.filter.gamma, 0.5);
    EXPECT_EQ(cfg.filter.mode, FilterMode::intent);
    EXPECT_EQ(cfg.csn.probability, 0.1);
    EXPECT_EQ(cfg.csn.max_active, 2);
    EXPECT_EQ(cfg.iou_threshold, 0.5);
}

TEST(Config, SectionsAndCustomStyle) {
    const auto cfg = parse_pipeline_config(
        "seed = 3\nthreads = 4\n"
        "[generate]\ngenerator = identity\ndomains = night-sunny, murky\n"
        "[style:murky]\ntags = murky, dim\ngain = 0.5\nfog_alpha = 0.3\n"
        "[filter]\ntau = 0.6\nmode = paper-literal\n"
        "[consistency]\ncar = black car, red car\nperson = pedestrian\nbus = city bus\n");
    EXPECT_EQ(cfg.seed, 3u);
    EXPECT_EQ(cfg.threads, 4u);
    EXPECT_EQ(cfg.generator_id, "identity");
    ASSERT_EQ(cfg.domains.size(), 2u);
    EXPECT_EQ(cfg.domains[1].name, "murky");
    EXPECT_EQ(cfg.domains[1].style.gain, (std::array<double, 3>{0.5, 0.5, 0.5}));
    EXPECT_EQ(cfg.domains[1].style.fog_alpha, 0.3);
    EXPECT_EQ(cfg.domains[1].domain_tags.tags(), (std::vector<std::string>{"murky", "dim"}));
    EXPECT_EQ(cfg.filter.mode, FilterMode::paper_literal);
    EXPECT_EQ(cfg.descriptors.consistency.size(), 3u);
}

TEST(Config, StyleSectionOverridesBuiltin) {
    const auto cfg = parse_pipeline_config("[generate]\ndomains = night-sunny\n[style:night-sunny]\nnoise_sigma = 0\n");
    EXPECT_EQ(cfg.domains[0].style.noise_sigma, 0.0);
    EXPECT_EQ(cfg.domains[0].style.gamma, 1.2);
}

TEST(Config, Errors) {
    EXPECT_THROW(parse_pipeline_config("[synth]\ncolour = red\n"), ParseError);
    EXPECT_THROW(parse_pipeline_config("[detector]\nbackbone = r50\n"), ParseError);
    EXPECT_THROW(parse_pipeline_config("seed = abc\n"), ParseError);
    EXPECT_THROW(parse_pipeline_config("[filter]\nmode = loose\n"), ParseError);
    EXPECT_THROW(parse_pipeline_config("[generate]\ndomains = atlantis\n"), ValidationError);
    EXPECT_THROW(parse_pipeline_config("[generate]\ngenerator = diffusion\n"), ValidationError);
    EXPECT_THROW(parse_pipeline_config("[csn]\nbatch_size = 3\n"), ValidationError);
    EXPECT_THROW(load_pipeline_config("/nonexistent/godiff.ini"), IoError);
}

TEST(Config, ValidationNamesEveryField) {
    try {
        parse_pipeline_config("[synth]\nwidth = 4\n[filter]\ntau = 0\n[csn]\nprobability = 2\n");
        FAIL();
    } catch (const ValidationError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("width"), std::string::npos) << msg;
        EXPECT_NE(msg.find("filter.tau"), std::string::npos) << msg;
        EXPECT_NE(msg.find("csn.probability"), std::string::npos) << msg;
    }
}

TEST(Config, EnvironmentSeedOverride) {
    EXPECT_EQ(parse_pipeline_config("seed = 3\n", std::string("99")).seed, 99u);
    EXPECT_EQ(parse_pipeline_config("seed = 3\n", std::string("")).seed, 3u);
    EXPECT_THROW(parse_pipeline_config("", std::string("-1")), ParseError);
}

TEST(CmdSynth, ByteIdenticalAndCreatesDirectories) {
    test::TempDir dir;
    auto cfg = small_config(dir);
    cfg.out_dir = dir.path() / "a" / "b" / "c";
    const auto path = cmd_synth(cfg);
    ASSERT_TRUE(std::filesystem::exists(path));
    const auto first = read_text_file(path);
    cmd_synth(cfg);
    EXPECT_EQ(read_text_file(path), first);
    EXPECT_EQ(load_dataset(path).images.size(), 4u);
}

TEST(CmdSynth, InvalidSizeNamesField) {
    test::TempDir dir;
    auto cfg = small_config(dir);
    cfg.synth.width = 3;
    try {
        cmd_synth(cfg);
        FAIL();
    } catch (const ValidationError& e) {
        EXPECT_NE(std::string(e.what()).find("width"), std::string::npos) << e.what();
    }
}

TEST(CmdGenerate, CardinalityManifestAndRerun) {
    test::TempDir dir;
    const auto cfg = small_config(dir);
    cmd_synth(cfg);
    const auto out = cmd_generate(cfg);
    ASSERT_EQ(out.dataset_files.size(), 4u);
    const auto source = load_dataset(cfg.source_file());
    for (const auto& f : out.dataset_files) {
        const auto ds = load_dataset(f);
        ASSERT_EQ(ds.images.size(), 4u);
        for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(ds.images[i].annotations, source.images[i].annotations);
    }

    const auto manifest = nlohmann::json::parse(read_text_file(out.manifest));
    EXPECT_EQ(manifest["schema_version"], 1);
    const auto specs = builtin_style_specs();
    for (const auto& d : manifest["domains"]) {
        const auto& spec = specs.at(d["name"].get<std::string>());
        const auto generated = load_dataset(Paths{cfg.out_dir}.generated(spec.name));
        for (std::size_t i = 0; i < d["images"].size(); ++i) {
            const auto rec = record_from_json(d["images"][i]);
            for (std::size_t b = 0; b < rec.instance_seeds.size(); ++b) {
                EXPECT_EQ(gen_instance_prompt(cfg.descriptors, source.images[i].annotations[b].category,
                                              rec.instance_seeds[b]).text,
                          rec.instance_prompts[b]);
            }
            EXPECT_EQ(regenerate_from_record(source.images[i], rec, spec, ProceduralGenerator{}, generator_config(cfg)),
                      generated.images[i]);
        }
    }

    std::vector<std::string> before;
    for (const auto& f : out.dataset_files) before.push_back(read_text_file(f));
    const auto manifest_text = read_text_file(out.manifest);
    cmd_generate(cfg);
    for (std::size_t k = 0; k < before.size(); ++k) EXPECT_EQ(read_text_file(out.dataset_files[k]), before[k]);
    EXPECT_EQ(read_text_file(out.manifest), manifest_text);
}

TEST(CmdGenerate, MissingSourceIsIoError) {
    test::TempDir dir;
    EXPECT_THROW(cmd_generate(small_config(dir)), IoError);
}

TEST(CmdFilter, IdentityGeneratorRetainsEverything) {
    test::TempDir dir;
    auto cfg = small_config(dir);
    cfg.generator_id = "identity";
    cmd_synth(cfg);
    cmd_generate(cfg);
    const auto out = cmd_filter(cfg);
    const auto source = load_dataset(cfg.source_file());
    EXPECT_EQ(out.rows.size(), source.annotation_count());
    for (const auto& r : out.rows) {
        EXPECT_EQ(r.similarity, 1.0);
        EXPECT_TRUE(r.retained);
    }
    for (const auto& f : out.dataset_files) {
        const auto ds = load_dataset(f);
        for (std::size_t i = 0; i < ds.images.size(); ++i) EXPECT_EQ(ds.images[i].annotations, source.images[i].annotations);
    }
}

TEST(CmdFilter, ModeFlipsEveryNonTieRow) {
    test::TempDir dir;
    auto cfg = small_config(dir);
    cmd_synth(cfg);
    cmd_generate(cfg);
    const auto intent = cmd_filter(cfg);
    cfg.filter.mode = FilterMode::paper_literal;
    const auto literal = cmd_filter(cfg);
    ASSERT_EQ(intent.rows.size(), literal.rows.size());
    const auto source = load_dataset(cfg.source_file());
    for (std::size_t k = 0; k < intent.rows.size(); ++k) {
        EXPECT_EQ(intent.rows[k].similarity, literal.rows[k].similarity);
        if (intent.rows[k].similarity != cfg.filter.tau) {
            EXPECT_NE(intent.rows[k].retained, literal.rows[k].retained);
        }
    }
    // Post-filter annotations are a subset of the source annotations.
    for (const auto& f : literal.dataset_files) {
        const auto ds = load_dataset(f);
        for (std::size_t i = 0; i < ds.images.size(); ++i) {
            for (const auto& a : ds.images[i].annotations) {
                const auto& src = source.images[i].annotations;
                EXPECT_NE(std::find(src.begin(), src.end(), a), src.end());
            }
        }
    }
    const auto csv = read_text_file(literal.report);
    EXPECT_EQ(csv.rfind("schema_version,image_id,box_index,similarity,retained\n", 0), 0u);
    EXPECT_EQ(static_cast<std::size_t>(std::count(csv.begin(), csv.end(), '\n')), literal.rows.size() + 1);
}

TEST(CmdTrainSim, ZeroProbabilityLeavesLossColumnsEmpty) {
    test::TempDir dir;
    auto cfg = small_config(dir, "probability = 0\n");
    cmd_synth(cfg);
    cmd_generate(cfg);
    const auto out = cmd_train_sim(cfg);
    for (const auto& s : out.steps) {
        EXPECT_EQ(s.forward.active, std::vector<bool>(4, false));
        EXPECT_FALSE(s.forward.total_cml.has_value());
    }
    const auto csv = read_text_file(out.report);
    EXPECT_NE(csv.find(",0000,,,"), std::string::npos) << csv;
}

TEST(CmdTrainSim, GradientCheckAndRerun) {
    test::TempDir dir;
    auto cfg = small_config(dir, "probability = 1\n");
    cmd_synth(cfg);
    cmd_generate(cfg);
    cmd_filter(cfg);
    const auto out = cmd_train_sim(cfg);
    EXPECT_LT(out.grad_check_max_rel_error, 1e-4);
    for (const auto& s : out.steps) EXPECT_EQ(s.forward.losses.size(), 4u);  // 2 layers x 2 pairs
    const auto first = read_text_file(out.report);
    cfg.threads = 4;
    cmd_train_sim(cfg);
    EXPECT_EQ(read_text_file(out.report), first);
}

TEST(CmdEval, PerfectAndEmptyDetections) {
    test::TempDir dir;
    const auto cfg = small_config(dir);
    cmd_synth(cfg);
    cmd_generate(cfg);

    std::vector<Detection> perfect;
    for (const auto& ds : evaluation_domains(cfg)) {
        for (const auto& img : ds.images) {
            for (const auto& a : img.annotations) perfect.push_back({a.box, a.category, 0.9, qualified_image_id(ds.domain, img.id)});
        }
    }
    write_text_file(dir / "perfect.jsonl", detections_jsonl(perfect));
    auto r = cmd_eval(cfg, dir / "perfect.jsonl").report;
    EXPECT_EQ(r.map, 1.0);
    for (const auto& [d, m] : r.per_domain_map) EXPECT_EQ(m, 1.0) << d;
    EXPECT_EQ(*r.mpc, 1.0);

    write_text_file(dir / "empty.jsonl", "");
    r = cmd_eval(cfg, dir / "empty.jsonl").report;
    for (const auto& [c, ap] : r.per_class_ap) EXPECT_EQ(ap, 0.0) << c;
    EXPECT_EQ(*r.mpc, 0.0);

    write_text_file(dir / "bad.jsonl", "{\"image_id\": \"x\"}\n");
    EXPECT_THROW(cmd_eval(cfg, dir / "bad.jsonl"), ParseError);
}

TEST(CmdEval, DetectionsRoundTrip) {
    const std::vector<Detection> dets{{{1.5, 2, 3, 4}, "car", 0.25, "d/img0"}, {{0, 0, 1, 1}, "bus", 1.0, "d/img1"}};
    const auto back = parse_detections(detections_jsonl(dets));
    ASSERT_EQ(back.size(), 2u);
    EXPECT_EQ(back[0].box, dets[0].box);
    EXPECT_EQ(back[1].category, "bus");
    EXPECT_EQ(back[0].confidence, 0.25);
}

TEST(CmdEval, DomainMapFixture) {
    test::TempDir dir;
    const auto cfg = small_config(dir);
    write_text_file(dir / "table.json",
                    R"({"daytime-sunny": 55.0, "night-sunny": 35.4, "dusk-rainy": 32.1, "night-rainy": 15.0, "daytime-foggy": 35.9})");
    const auto out = cmd_eval_domain_map(cfg, dir / "table.json");
    EXPECT_NEAR(*out.report.mpc, 29.6, 1e-12);
    EXPECT_TRUE(std::filesystem::exists(out.csv));
}

TEST(CmdMmd, SameDomainZeroAndFogAboveIdentity) {
    test::TempDir dir;
    auto cfg = small_config(dir, "[generate]\ndomains = daytime-foggy\n[style:daytime-foggy]\nfog_alpha = 0.8\n");
    const auto source = cmd_synth(cfg);
    EXPECT_LT(cmd_mmd(cfg, source, source).mmd2, 1e-12);

    const auto fog = cmd_generate(cfg).dataset_files.front();
    const double fog_mmd = cmd_mmd(cfg, source, fog).mmd2;

    auto id_cfg = cfg;
    id_cfg.generator_id = "identity";
    id_cfg.out_dir = dir.path() / "identity";
    id_cfg.source_path = source;
    const auto ident = cmd_generate(id_cfg).dataset_files.front();
    const double id_mmd = cmd_mmd(cfg, source, ident).mmd2;

    EXPECT_GT(fog_mmd, id_mmd);
    EXPECT_EQ(cmd_mmd(cfg, source, fog).mmd2, fog_mmd);
}

}  // namespace
}  // namespace godiff
