#pragma once

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "godiff/csn.hpp"
#include "godiff/dataset.hpp"
#include "godiff/error.hpp"
#include "godiff/io.hpp"
#include "godiff/object_filter.hpp"
#include "godiff/prompt.hpp"
#include "godiff/ptdg.hpp"

// Pipeline configuration, read from a sectioned key = value file:
//
//   seed = 7                     ; top-level keys: seed, out, source, threads
//   [synth]     images width height min_boxes max_boxes categories domain
//   [generate]  generator domains images_per_source
//   [style:NAME] tags gain bias gamma fog_alpha noise_sigma instance_strength
//   [descriptors] objects actions weather scenes times
//   [consistency] CATEGORY = descriptor, descriptor, ...
//   [filter]    embedder gamma tau mode
//   [csn]       probability max_active epsilon batch_size steps grad_check_step
//   [eval]      iou_threshold source_domain
//   [mmd]       gamma
//
// Lists are comma separated. `;` and `#` start comment lines. Unknown
// sections or keys are rejected. GODIFF_SEED overrides `seed`.

namespace godiff {

struct PipelineConfig {
    std::uint64_t seed = 7;
    std::filesystem::path out_dir = "out";
    std::optional<std::filesystem::path> source_path;
    std::size_t threads = 1;

    SynthParams synth{.seed = 0, .n_images = 16, .width = 64, .height = 64, .min_boxes = 2, .max_boxes = 4,
                      .categories = {"car", "person", "bus"}};

    std::string generator_id = "procedural";
    std::vector<StyleDomainSpec> domains;
    int images_per_source = 1;
    DescriptorSets descriptors = default_descriptor_sets();

    std::string embedder_id = "stub";
    FilterConfig filter;

    CsnPolicy csn;
    int batch_size = 4;
    int steps = 8;
    double grad_check_step = 1e-5;

    double iou_threshold = 0.5;
    std::string source_domain = "daytime-sunny";

    double mmd_gamma = 0.5;

    std::filesystem::path source_file() const { return source_path.value_or(out_dir / "source.json"); }

    void validate() const {
        std::vector<std::string> v;
        auto collect = [&](auto&& fn) {
            try {
                fn();
            } catch (const ValidationError& e) {
                if (e.violations().empty()) {
                    v.push_back(e.what());
                } else {
                    v.insert(v.end(), e.violations().begin(), e.violations().end());
                }
            }
        };
        collect([&] { validate_synth_params(synth); });
        collect([&] { make_generator(generator_id); });
        collect([&] { make_embedder(embedder_id); });
        for (const auto& d : domains) collect([&] { d.validate(); });
        collect([&] { descriptors.validate(); });
        for (const auto& c : synth.categories) collect([&] { descriptors.consistent_objects(c); });
        collect([&] { filter.validate(); });
        collect([&] { csn.validate(); });
        if (domains.empty()) v.push_back("generate.domains: must name at least one domain");
        if (images_per_source < 1) v.push_back("generate.images_per_source: must be >= 1");
        if (batch_size < 2 || batch_size % 2 != 0) v.push_back("csn.batch_size: must be even and >= 2");
        if (steps < 1) v.push_back("csn.steps: must be >= 1");
        if (!(grad_check_step > 0.0)) v.push_back("csn.grad_check_step: must be > 0");
        if (!(iou_threshold > 0.0 && iou_threshold <= 1.0)) v.push_back("eval.iou_threshold: must be in (0, 1]");
        if (!(mmd_gamma > 0.0)) v.push_back("mmd.gamma: must be > 0");
        if (!v.empty()) throw ValidationError("invalid pipeline config:", std::move(v));
    }
};

inline PipelineConfig default_pipeline_config() {
    PipelineConfig cfg;
    const auto specs = builtin_style_specs();
    for (const auto& name : target_domain_names()) cfg.domains.push_back(specs.at(name));
    return cfg;
}

namespace detail {

inline std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string item;
    std::istringstream in(s);
    while (std::getline(in, item, ',')) {
        const auto a = item.find_first_not_of(" \t");
        if (a == std::string::npos) continue;
        const auto b = item.find_last_not_of(" \t");
        out.push_back(item.substr(a, b - a + 1));
    }
    return out;
}

template <typename T>
T parse_value(const std::string& text, const std::string& field);

template <>
inline double parse_value<double>(const std::string& text, const std::string& field) {
    try {
        std::size_t pos = 0;
        const double v = std::stod(text, &pos);
        if (pos != text.size()) throw std::invalid_argument(text);
        return v;
    } catch (const std::exception&) {
        throw ParseError(field + ": expected a number, got '" + text + "'");
    }
}

template <>
inline std::int64_t parse_value<std::int64_t>(const std::string& text, const std::string& field) {
    try {
        std::size_t pos = 0;
        const long long v = std::stoll(text, &pos);
        if (pos != text.size()) throw std::invalid_argument(text);
        return v;
    } catch (const std::exception&) {
        throw ParseError(field + ": expected an integer, got '" + text + "'");
    }
}

template <>
inline std::uint64_t parse_value<std::uint64_t>(const std::string& text, const std::string& field) {
    try {
        std::size_t pos = 0;
        if (!text.empty() && text.front() == '-') throw std::invalid_argument(text);
        const unsigned long long v = std::stoull(text, &pos);
        if (pos != text.size()) throw std::invalid_argument(text);
        return v;
    } catch (const std::exception&) {
        throw ParseError(field + ": expected a non-negative integer, got '" + text + "'");
    }
}

inline int parse_int(const std::string& text, const std::string& field) {
    const auto v = parse_value<std::int64_t>(text, field);
    if (v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max()) {
        throw ParseError(field + ": out of range");
    }
    return static_cast<int>(v);
}

using Ptree = boost::property_tree::ptree;

inline void apply_style_section(StyleDomainSpec& spec, const Ptree& section, const std::string& where) {
    for (const auto& [key, node] : section) {
        const std::string value = node.data();
        const std::string field = where + "." + key;
        if (key == "tags") {
            spec.domain_tags = TagSet(split_list(value));
        } else if (key == "gain") {
            auto parts = split_list(value);
            if (parts.size() == 1) parts = {parts[0], parts[0], parts[0]};
            if (parts.size() != 3) throw ParseError(field + ": expected 1 or 3 values");
            for (std::size_t c = 0; c < 3; ++c) spec.style.gain[c] = parse_value<double>(parts[c], field);
        } else if (key == "bias") {
            spec.style.bias = parse_value<double>(value, field);
        } else if (key == "gamma") {
            spec.style.gamma = parse_value<double>(value, field);
        } else if (key == "fog_alpha") {
            spec.style.fog_alpha = parse_value<double>(value, field);
        } else if (key == "noise_sigma") {
            spec.style.noise_sigma = parse_value<double>(value, field);
        } else if (key == "instance_strength") {
            spec.style.instance_strength = parse_value<double>(value, field);
        } else {
            throw ParseError(field + ": unknown key");
        }
    }
}

}  // namespace detail

/// Parses config text. `env_seed` stands in for the GODIFF_SEED variable.
inline PipelineConfig parse_pipeline_config(const std::string& text,
                                            const std::optional<std::string>& env_seed = std::nullopt) {
    using namespace detail;
    Ptree tree;
    try {
        std::istringstream in(text);
        boost::property_tree::ini_parser::read_ini(in, tree);
    } catch (const boost::property_tree::ini_parser_error& e) {
        throw ParseError("config line " + std::to_string(e.line()) + ": " + e.message());
    }

    PipelineConfig cfg = default_pipeline_config();
    std::vector<std::string> domain_names = target_domain_names();
    std::map<std::string, const Ptree*> style_sections;
    bool consistency_given = false;

    for (const auto& [name, node] : tree) {
        if (name.rfind("style:", 0) == 0) {
            style_sections[name.substr(6)] = &node;
            continue;
        }
        if (node.empty()) {
            // Top-level key.
            const std::string v = node.data();
            if (name == "seed") {
                cfg.seed = parse_value<std::uint64_t>(v, "seed");
            } else if (name == "out") {
                cfg.out_dir = v;
            } else if (name == "source") {
                cfg.source_path = std::filesystem::path(v);
            } else if (name == "threads") {
                cfg.threads = parse_value<std::uint64_t>(v, "threads");
            } else {
                throw ParseError(name + ": unknown top-level key");
            }
            continue;
        }
        for (const auto& [key, child] : node) {
            const std::string v = child.data();
            const std::string field = name + "." + key;
            if (name == "synth") {
                if (key == "images") cfg.synth.n_images = parse_int(v, field);
                else if (key == "width") cfg.synth.width = parse_int(v, field);
                else if (key == "height") cfg.synth.height = parse_int(v, field);
                else if (key == "min_boxes") cfg.synth.min_boxes = parse_int(v, field);
                else if (key == "max_boxes") cfg.synth.max_boxes = parse_int(v, field);
                else if (key == "categories") cfg.synth.categories = split_list(v);
                else if (key == "domain") cfg.synth.domain = v;
                else throw ParseError(field + ": unknown key");
            } else if (name == "generate") {
                if (key == "generator") cfg.generator_id = v;
                else if (key == "domains") domain_names = split_list(v);
                else if (key == "images_per_source") cfg.images_per_source = parse_int(v, field);
                else throw ParseError(field + ": unknown key");
            } else if (name == "descriptors") {
                if (key == "objects") cfg.descriptors.objects = split_list(v);
                else if (key == "actions") cfg.descriptors.actions = split_list(v);
                else if (key == "weather") cfg.descriptors.weather = split_list(v);
                else if (key == "scenes") cfg.descriptors.scenes = split_list(v);
                else if (key == "times") cfg.descriptors.times = split_list(v);
                else throw ParseError(field + ": unknown key");
            } else if (name == "consistency") {
                if (!consistency_given) cfg.descriptors.consistency.clear();
                consistency_given = true;
                cfg.descriptors.consistency[key] = split_list(v);
            } else if (name == "filter") {
                if (key == "embedder") cfg.embedder_id = v;
                else if (key == "gamma") cfg.filter.gamma = parse_value<double>(v, field);
                else if (key == "tau") cfg.filter.tau = parse_value<double>(v, field);
                else if (key == "mode") {
                    try {
                        cfg.filter.mode = parse_filter_mode(v);
                    } catch (const ValidationError& e) {
                        throw ParseError(field + ": " + e.what());
                    }
                } else throw ParseError(field + ": unknown key");
            } else if (name == "csn") {
                if (key == "probability") cfg.csn.probability = parse_value<double>(v, field);
                else if (key == "max_active") cfg.csn.max_active = parse_int(v, field);
                else if (key == "epsilon") cfg.csn.epsilon = parse_value<double>(v, field);
                else if (key == "batch_size") cfg.batch_size = parse_int(v, field);
                else if (key == "steps") cfg.steps = parse_int(v, field);
                else if (key == "grad_check_step") cfg.grad_check_step = parse_value<double>(v, field);
                else throw ParseError(field + ": unknown key");
            } else if (name == "eval") {
                if (key == "iou_threshold") cfg.iou_threshold = parse_value<double>(v, field);
                else if (key == "source_domain") cfg.source_domain = v;
                else throw ParseError(field + ": unknown key");
            } else if (name == "mmd") {
                if (key == "gamma") cfg.mmd_gamma = parse_value<double>(v, field);
                else throw ParseError(field + ": unknown key");
            } else {
                throw ParseError("[" + name + "]: unknown section");
            }
        }
    }

    const auto builtin = builtin_style_specs();
    cfg.domains.clear();
    for (const auto& dn : domain_names) {
        StyleDomainSpec spec;
        if (auto it = builtin.find(dn); it != builtin.end()) {
            spec = it->second;
        } else if (!style_sections.count(dn)) {
            throw ValidationError("generate.domains: '" + dn + "' is neither built in nor defined by [style:" + dn + "]");
        }
        spec.name = dn;
        if (auto it = style_sections.find(dn); it != style_sections.end()) {
            apply_style_section(spec, *it->second, "style:" + dn);
        }
        cfg.domains.push_back(std::move(spec));
    }

    if (env_seed && !env_seed->empty()) cfg.seed = parse_value<std::uint64_t>(*env_seed, "GODIFF_SEED");
    cfg.validate();
    return cfg;
}

inline std::optional<std::string> seed_from_environment() {
    if (const char* s = std::getenv("GODIFF_SEED")) return std::string(s);
    return std::nullopt;
}

inline PipelineConfig load_pipeline_config(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw IoError("config file '" + path.string() + "' does not exist");
    return parse_pipeline_config(read_text_file(path), seed_from_environment());
}

}  // namespace godiff
