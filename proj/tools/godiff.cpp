// godiff: command-line driver for the augmentation pipeline.
//
//   godiff synth     --config C [--seed N] [--out DIR]
//   godiff generate  --config C [--generator identity|procedural]
//   godiff filter    --config C [--embedder stub] [--filter-mode intent|paper-literal]
//   godiff train-sim --config C
//   godiff eval      --config C (--detections FILE | --domain-map FILE)
//   godiff mmd       --config C --domain-a FILE --domain-b FILE
//
// Exit codes: 0 success, 1 validation error, 2 I/O error, 3 contract violation.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "godiff/pipeline.hpp"

namespace {

struct CommonFlags {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    std::optional<std::string> generator;
    std::optional<std::string> embedder;
    std::optional<std::string> filter_mode;
    std::optional<std::size_t> threads;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
    cmd->add_option("--config", f.config, "Pipeline config file (defaults apply when omitted)");
    cmd->add_option("--seed", f.seed, "Global seed; overrides the config and GODIFF_SEED");
    cmd->add_option("--out", f.out, "Output directory");
    cmd->add_option("--generator", f.generator, "Generator id: identity|procedural");
    cmd->add_option("--embedder", f.embedder, "Embedder id: stub");
    cmd->add_option("--filter-mode", f.filter_mode, "intent|paper-literal");
    cmd->add_option("--threads", f.threads, "Worker threads (0 = all cores)");
}

godiff::PipelineConfig resolve_config(const CommonFlags& f) {
    godiff::PipelineConfig cfg = f.config.empty()
                                     ? godiff::parse_pipeline_config("", godiff::seed_from_environment())
                                     : godiff::load_pipeline_config(f.config);
    if (f.seed) cfg.seed = *f.seed;
    if (f.out) cfg.out_dir = *f.out;
    if (f.generator) cfg.generator_id = *f.generator;
    if (f.embedder) cfg.embedder_id = *f.embedder;
    if (f.filter_mode) cfg.filter.mode = godiff::parse_filter_mode(*f.filter_mode);
    if (f.threads) cfg.threads = *f.threads;
    cfg.validate();
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"godiff: pseudo-domain augmentation pipeline"};
    app.require_subcommand(1);

    CommonFlags flags;
    auto* synth = app.add_subcommand("synth", "Write a synthetic toy source dataset");
    auto* generate = app.add_subcommand("generate", "Generate one pseudo-domain dataset per style domain");
    auto* filter = app.add_subcommand("filter", "Filter generated boxes against a pseudo-source");
    auto* train = app.add_subcommand("train-sim", "Run the CSN toy-backbone harness");
    auto* eval = app.add_subcommand("eval", "Evaluate detections (mAP, mPC)");
    auto* mmd = app.add_subcommand("mmd", "Kernel two-sample statistic between two datasets");
    for (auto* c : {synth, generate, filter, train, eval, mmd}) add_common(c, flags);

    std::string detections, domain_map;
    auto* det_opt = eval->add_option("--detections", detections, "Detections, one JSON object per line");
    auto* map_opt = eval->add_option("--domain-map", domain_map, "JSON object domain -> mAP; reports mPC only");
    det_opt->excludes(map_opt);

    std::string domain_a, domain_b;
    mmd->add_option("--domain-a", domain_a, "First dataset file")->required();
    mmd->add_option("--domain-b", domain_b, "Second dataset file")->required();

    std::string simulate_out;
    auto* simulate = app.add_subcommand("simulate-detections",
                                        "Write jittered ground-truth detections for evaluator smoke runs");
    add_common(simulate, flags);
    simulate->add_option("--output", simulate_out, "Output JSONL path")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        const auto cfg = resolve_config(flags);
        if (synth->parsed()) {
            std::vector<std::string> warnings;
            const auto path = godiff::cmd_synth(cfg, &warnings);
            for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
            std::cout << path.string() << "\n";
        } else if (generate->parsed()) {
            const auto out = godiff::cmd_generate(cfg);
            for (const auto& p : out.dataset_files) std::cout << p.string() << "\n";
            std::cout << out.manifest.string() << "\n";
        } else if (filter->parsed()) {
            const auto out = godiff::cmd_filter(cfg);
            std::size_t kept = 0;
            for (const auto& r : out.rows) kept += r.retained;
            std::cout << "retained " << kept << " of " << out.rows.size() << " boxes (" << godiff::to_string(cfg.filter.mode)
                      << " mode)\n"
                      << out.report.string() << "\n";
        } else if (train->parsed()) {
            const auto out = godiff::cmd_train_sim(cfg);
            std::cout << out.report.string() << "\n"
                      << "grad check max relative error: " << out.grad_check_max_rel_error << "\n";
        } else if (eval->parsed()) {
            if (detections.empty() && domain_map.empty()) {
                throw godiff::ValidationError("eval: one of --detections or --domain-map is required");
            }
            const auto out = detections.empty() ? godiff::cmd_eval_domain_map(cfg, domain_map)
                                                : godiff::cmd_eval(cfg, detections);
            std::printf("mAP %.1f\n", 100.0 * out.report.map);
            if (!detections.empty()) {
                for (const auto& [d, m] : out.report.per_domain_map) std::printf("  %-16s %.1f\n", d.c_str(), 100.0 * m);
                if (out.report.mpc) std::printf("mPC %.1f\n", 100.0 * *out.report.mpc);
            } else if (out.report.mpc) {
                // Domain-map values are taken as given, with no percent scaling.
                std::printf("mPC %s\n", godiff::format_double(*out.report.mpc).c_str());
            }
            std::cout << out.json.string() << "\n";
        } else if (mmd->parsed()) {
            const auto out = godiff::cmd_mmd(cfg, domain_a, domain_b);
            std::cout << godiff::format_double(out.mmd2) << "\n" << out.csv.string() << "\n";
        } else if (simulate->parsed()) {
            const auto dets = godiff::simulate_detections(godiff::evaluation_domains(cfg), cfg.seed);
            godiff::write_text_file(simulate_out, godiff::detections_jsonl(dets));
            std::cout << simulate_out << "\n";
        }
        return 0;
    } catch (const godiff::ValidationError& e) {
        std::cerr << "validation error: " << e.what() << "\n";
        return 1;
    } catch (const godiff::IoError& e) {
        std::cerr << "I/O error: " << e.what() << "\n";
        return 2;
    } catch (const godiff::ContractViolation& e) {
        std::cerr << "contract violation: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 3;
    }
}
