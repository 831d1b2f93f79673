#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <numbers>
#include <string>
#include <vector>

#include "godiff/dataset.hpp"
#include "godiff/error.hpp"
#include "godiff/parallel.hpp"
#include "godiff/prompt.hpp"
#include "godiff/random.hpp"

// Pseudo-target data generation: source image + global prompt + per-box
// instance conditions -> restyled image carrying the source annotations.

namespace godiff {

struct StyleParams {
    std::array<double, 3> gain{1.0, 1.0, 1.0};
    double bias = 0.0;
    double gamma = 1.0;
    double fog_alpha = 0.0;
    double noise_sigma = 0.0;
    /// Strength of the per-box restyling; 0 leaves boxes to the global transform.
    double instance_strength = 1.0;

    bool operator==(const StyleParams&) const = default;
};

struct StyleDomainSpec {
    std::string name;
    TagSet domain_tags;
    StyleParams style;

    void validate() const {
        std::vector<std::string> v;
        if (name.empty()) v.push_back("name: must be non-empty");
        for (std::size_t c = 0; c < 3; ++c) {
            if (!(style.gain[c] > 0.0)) v.push_back("gain[" + std::to_string(c) + "]: must be > 0");
        }
        if (!std::isfinite(style.bias)) v.push_back("bias: must be finite");
        if (!(style.gamma > 0.0)) v.push_back("gamma: must be > 0");
        if (!(style.fog_alpha >= 0.0 && style.fog_alpha <= 1.0)) v.push_back("fog_alpha: must be in [0, 1]");
        if (!(style.noise_sigma >= 0.0)) v.push_back("noise_sigma: must be >= 0");
        if (!(style.instance_strength >= 0.0)) v.push_back("instance_strength: must be >= 0");
        if (!v.empty()) throw ValidationError("invalid style domain '" + name + "':", std::move(v));
    }

    bool operator==(const StyleDomainSpec&) const = default;
};

/// Calibrated stand-ins for the four evaluation weather/time domains plus the
/// sunny daytime source domain.
inline std::map<std::string, StyleDomainSpec> builtin_style_specs() {
    std::map<std::string, StyleDomainSpec> specs;
    specs["daytime-sunny"] = {"daytime-sunny", TagSet{"daytime", "sunny"}, {{1.0, 1.0, 1.0}, 0.0, 1.0, 0.0, 0.01, 0.35}};
    specs["night-sunny"] = {"night-sunny", TagSet{"night", "dark"}, {{0.35, 0.35, 0.42}, 0.0, 1.2, 0.0, 0.01, 1.0}};
    specs["night-rainy"] = {"night-rainy", TagSet{"night", "rainy", "dark"}, {{0.30, 0.32, 0.42}, 0.0, 1.2, 0.1, 0.05, 1.0}};
    specs["daytime-foggy"] = {"daytime-foggy", TagSet{"daytime", "foggy"}, {{1.0, 1.0, 1.0}, 0.0, 1.0, 0.5, 0.01, 1.0}};
    specs["dusk-rainy"] = {"dusk-rainy", TagSet{"dusk", "rainy"}, {{0.70, 0.55, 0.60}, 0.02, 1.1, 0.15, 0.05, 1.0}};
    return specs;
}

inline const std::vector<std::string>& target_domain_names() {
    static const std::vector<std::string> names{"night-sunny", "night-rainy", "daytime-foggy", "dusk-rainy"};
    return names;
}

struct InstanceCondition {
    InstancePrompt prompt;
    BoundingBox box;

    bool operator==(const InstanceCondition&) const = default;
};

struct GeneratorConfig {
    std::string generator_id = "procedural";
    std::uint64_t seed = 0;
    std::map<std::string, double> parameters;
};

inline std::map<std::string, double> style_to_parameters(const StyleParams& s) {
    return {{"gain_r", s.gain[0]},
            {"gain_g", s.gain[1]},
            {"gain_b", s.gain[2]},
            {"bias", s.bias},
            {"gamma", s.gamma},
            {"fog_alpha", s.fog_alpha},
            {"noise_sigma", s.noise_sigma},
            {"instance_strength", s.instance_strength}};
}

inline StyleParams style_from_parameters(const std::map<std::string, double>& p) {
    StyleParams s;
    auto get = [&](const char* key, double fallback) {
        auto it = p.find(key);
        return it == p.end() ? fallback : it->second;
    };
    s.gain = {get("gain_r", 1.0), get("gain_g", 1.0), get("gain_b", 1.0)};
    s.bias = get("bias", 0.0);
    s.gamma = get("gamma", 1.0);
    s.fog_alpha = get("fog_alpha", 0.0);
    s.noise_sigma = get("noise_sigma", 0.0);
    s.instance_strength = get("instance_strength", 1.0);
    return s;
}

/// What a generator sees for one image.
struct GenerationRequest {
    const LabeledImage& source;
    const GlobalPrompt& global_prompt;
    const std::vector<InstanceCondition>& conditions;
    const GeneratorConfig& config;
    /// Per-image seed derived from the config seed; the only randomness source.
    std::uint64_t image_seed;
};

class Generator {
public:
    virtual ~Generator() = default;
    virtual std::string id() const = 0;
    /// Implementations that keep mutable state return false; the pipeline then
    /// serializes calls.
    virtual bool thread_safe() const { return true; }
    virtual ImageRaster generate(const GenerationRequest& request) const = 0;
};

class IdentityGenerator final : public Generator {
public:
    std::string id() const override { return "identity"; }
    ImageRaster generate(const GenerationRequest& request) const override { return request.source.raster; }
};

namespace detail {

/// Rotation about the gray axis by `angle` radians.
inline std::array<double, 9> hue_rotation(double angle) {
    const double c = std::cos(angle), s = std::sin(angle);
    const double k = (1.0 - c) / 3.0, r = std::sqrt(1.0 / 3.0) * s;
    return {c + k, k - r, k + r,
            k + r, c + k, k - r,
            k - r, k + r, c + k};
}

}  // namespace detail

/// Global per-pixel transform followed by per-box restyling keyed by the
/// instance prompt text. Positions and dimensions are never altered.
inline ImageRaster procedural_stylize(const ImageRaster& raster, const std::vector<BoundingBox>& boxes,
                                      const StyleParams& style, const std::vector<InstancePrompt>& instance_prompts,
                                      std::uint64_t seed) {
    if (boxes.size() != instance_prompts.size()) {
        throw ValidationError("procedural_stylize: " + std::to_string(boxes.size()) + " boxes but " +
                              std::to_string(instance_prompts.size()) + " instance prompts");
    }
    ImageRaster out = raster;
    const CounterRng noise(derive_seed(seed, stable_hash("pixel-noise")));
    const std::size_t plane = raster.plane_size();
    for (std::size_t c = 0; c < 3; ++c) {
        for (std::size_t i = 0; i < plane; ++i) {
            const std::size_t idx = c * plane + i;
            const double p = raster.pixels[idx];
            const double base = std::max(0.0, style.gain[c] * p + style.bias);
            double v = std::pow(base, style.gamma) * (1.0 - style.fog_alpha) + 0.5 * style.fog_alpha;
            if (style.noise_sigma > 0.0) v += style.noise_sigma * noise.normal(idx);
            out.pixels[idx] = static_cast<float>(std::clamp(v, 0.0, 1.0));
        }
    }

    if (style.instance_strength <= 0.0) return out;
    for (std::size_t b = 0; b < boxes.size(); ++b) {
        CounterStream h(derive_seed(stable_hash(instance_prompts[b].text), stable_hash("instance-style")));
        const double angle = style.instance_strength * h.uniform(-std::numbers::pi / 3.0, std::numbers::pi / 3.0);
        const double contrast = 1.0 + style.instance_strength * h.uniform(-0.3, 0.3);
        std::array<double, 3> tint{};
        for (auto& t : tint) t = style.instance_strength * h.uniform(-0.12, 0.12);
        const auto rot = detail::hue_rotation(angle);

        const PixelRect r = pixel_rect(boxes[b], raster.width, raster.height);
        for (int y = r.y0; y < r.y1; ++y) {
            for (int x = r.x0; x < r.x1; ++x) {
                const std::array<double, 3> px{out.at(0, y, x), out.at(1, y, x), out.at(2, y, x)};
                for (int c = 0; c < 3; ++c) {
                    const auto row = static_cast<std::size_t>(3 * c);
                    const double rotated = rot[row] * px[0] + rot[row + 1] * px[1] + rot[row + 2] * px[2];
                    const double v = 0.5 + contrast * (rotated - 0.5) + tint[static_cast<std::size_t>(c)];
                    out.at(c, y, x) = static_cast<float>(std::clamp(v, 0.0, 1.0));
                }
            }
        }
    }
    return out;
}

/// Reference generator backed by procedural_stylize. Style parameters come
/// from GeneratorConfig::parameters.
class ProceduralGenerator final : public Generator {
public:
    std::string id() const override { return "procedural"; }

    ImageRaster generate(const GenerationRequest& request) const override {
        std::vector<BoundingBox> boxes;
        std::vector<InstancePrompt> prompts;
        for (const auto& c : request.conditions) {
            boxes.push_back(c.box);
            prompts.push_back(c.prompt);
        }
        return procedural_stylize(request.source.raster, boxes, style_from_parameters(request.config.parameters),
                                  prompts, request.image_seed);
    }
};

inline std::unique_ptr<Generator> make_generator(const std::string& id) {
    if (id == "identity") return std::make_unique<IdentityGenerator>();
    if (id == "procedural") return std::make_unique<ProceduralGenerator>();
    throw ValidationError("unknown generator '" + id + "' (expected identity|procedural)");
}

inline std::uint64_t image_generation_seed(std::uint64_t global_seed, std::string_view domain, std::string_view image_id) {
    return derive_seed(global_seed, stable_hash("generate-image"), stable_hash(domain), stable_hash(image_id));
}

/// Runs one generator call and enforces the contract: same dimensions, valid
/// pixels, annotations carried over verbatim.
inline LabeledImage generate_image(const LabeledImage& source, const GlobalPrompt& global_prompt,
                                   const std::vector<InstanceCondition>& conditions, const Generator& generator,
                                   const GeneratorConfig& cfg, const std::string& domain, std::uint64_t image_seed) {
    if (conditions.size() != source.annotations.size()) {
        throw ValidationError("generate_image: image '" + source.id + "' has " +
                              std::to_string(source.annotations.size()) + " annotations but " +
                              std::to_string(conditions.size()) + " instance conditions");
    }
    for (std::size_t i = 0; i < conditions.size(); ++i) {
        validate_box(conditions[i].box, source.raster);
        if (conditions[i].box != source.annotations[i].box) {
            throw ValidationError("generate_image: condition " + std::to_string(i) + " of image '" + source.id +
                                  "' does not match its annotation box");
        }
    }

    ImageRaster raster;
    try {
        raster = generator.generate(GenerationRequest{source, global_prompt, conditions, cfg, image_seed});
    } catch (const ContractViolation&) {
        throw;
    } catch (const std::exception& e) {
        throw std::runtime_error("generator '" + generator.id() + "' failed on image '" + source.id + "': " + e.what());
    }
    if (raster.width != source.raster.width || raster.height != source.raster.height) {
        throw ContractViolation("generator '" + generator.id() + "' returned " + std::to_string(raster.width) + "x" +
                                std::to_string(raster.height) + " for image '" + source.id + "' of size " +
                                std::to_string(source.raster.width) + "x" + std::to_string(source.raster.height));
    }
    if (auto v = raster_violations(raster, "generated raster"); !v.empty()) {
        throw ContractViolation("generator '" + generator.id() + "' produced an invalid raster for image '" +
                                source.id + "': " + v.front());
    }

    LabeledImage out;
    out.id = source.id;
    out.raster = std::move(raster);
    out.annotations = source.annotations;
    out.domain = domain;
    return out;
}

/// Everything needed to regenerate one image in isolation.
struct GenerationRecord {
    std::string image_id;
    std::string source_image_id;
    std::string domain;
    std::uint64_t image_seed = 0;
    std::vector<std::string> tags;
    std::string global_prompt;
    std::vector<std::uint64_t> instance_seeds;
    std::vector<std::string> instance_prompts;

    bool operator==(const GenerationRecord&) const = default;
};

struct GenerationOptions {
    /// Stylized copies per source image. Copies after the first get an
    /// "~k" id suffix.
    int images_per_source = 1;
    std::size_t threads = 1;
};

inline std::string variant_image_id(const std::string& source_id, int variant) {
    return variant == 0 ? source_id : source_id + "~" + std::to_string(variant);
}

/// Inverse of variant_image_id.
inline std::string source_image_id(const std::string& id) {
    const auto pos = id.rfind('~');
    if (pos == std::string::npos) return id;
    const auto suffix = std::string_view(id).substr(pos + 1);
    if (suffix.empty() || !std::all_of(suffix.begin(), suffix.end(), [](char c) { return c >= '0' && c <= '9'; })) {
        return id;
    }
    return id.substr(0, pos);
}

/// Tags, prompts, seeds and the generated image for one (source image, variant).
inline std::pair<LabeledImage, GenerationRecord> generate_one(const LabeledImage& src, int variant,
                                                              const StyleDomainSpec& spec,
                                                              const DescriptorSets& descriptors,
                                                              const Generator& generator, const GeneratorConfig& cfg,
                                                              const Tagger& tagger) {
    GenerationRecord rec;
    rec.image_id = variant_image_id(src.id, variant);
    rec.source_image_id = src.id;
    rec.domain = spec.name;
    rec.image_seed = image_generation_seed(cfg.seed, spec.name, rec.image_id);

    const TagSet tags = augment_tags(extract_tags(src, tagger), spec.domain_tags);
    const GlobalPrompt global = decode_prompt(tags);
    rec.tags = tags.tags();
    rec.global_prompt = global.text;

    std::vector<InstanceCondition> conditions;
    conditions.reserve(src.annotations.size());
    for (std::size_t b = 0; b < src.annotations.size(); ++b) {
        const auto seed = instance_prompt_seed(cfg.seed, spec.name, rec.image_id, b);
        auto prompt = gen_instance_prompt(descriptors, src.annotations[b].category, seed);
        rec.instance_seeds.push_back(seed);
        rec.instance_prompts.push_back(prompt.text);
        conditions.push_back({std::move(prompt), src.annotations[b].box});
    }

    LabeledImage img = generate_image(src, global, conditions, generator, cfg, spec.name, rec.image_seed);
    img.id = rec.image_id;
    return {std::move(img), std::move(rec)};
}

/// One pseudo-domain dataset from a source dataset. Each image draws from its
/// own derived seed, so the result is identical for any thread count.
inline DomainDataset generate_pseudo_domain(const DomainDataset& source, const StyleDomainSpec& spec,
                                            const DescriptorSets& descriptors, const Generator& generator,
                                            const GeneratorConfig& base_cfg, const GenerationOptions& opts = {},
                                            std::vector<GenerationRecord>* records = nullptr,
                                            const Tagger& tagger = StubTagger{}) {
    validate_dataset(source);
    spec.validate();
    descriptors.validate();
    if (opts.images_per_source < 1) throw ValidationError("images_per_source: must be >= 1");

    GeneratorConfig cfg = base_cfg;
    for (const auto& [k, v] : style_to_parameters(spec.style)) cfg.parameters.emplace(k, v);

    const std::size_t per = static_cast<std::size_t>(opts.images_per_source);
    const std::size_t total = source.images.size() * per;
    std::vector<LabeledImage> images(total);
    std::vector<GenerationRecord> recs(total);
    const std::size_t threads = generator.thread_safe() ? opts.threads : 1;

    parallel_for(total, threads, [&](std::size_t k) {
        const auto& src = source.images[k / per];
        try {
            auto [img, rec] = generate_one(src, static_cast<int>(k % per), spec, descriptors, generator, cfg, tagger);
            images[k] = std::move(img);
            recs[k] = std::move(rec);
        } catch (const ContractViolation& e) {
            throw ContractViolation("domain '" + spec.name + "', image '" + src.id + "': " + e.what());
        } catch (const ValidationError& e) {
            throw ValidationError("domain '" + spec.name + "', image '" + src.id + "': " + e.what());
        } catch (const std::exception& e) {
            throw std::runtime_error("domain '" + spec.name + "', image '" + src.id + "': " + e.what());
        }
    });

    DomainDataset out;
    out.domain = spec.name;
    out.categories = source.categories;
    out.images = std::move(images);
    if (records) records->insert(records->end(), recs.begin(), recs.end());
    return out;
}

/// Rebuilds one generated image from its manifest record alone.
inline LabeledImage regenerate_from_record(const LabeledImage& source, const GenerationRecord& rec,
                                           const StyleDomainSpec& spec, const Generator& generator,
                                           const GeneratorConfig& base_cfg) {
    if (rec.instance_prompts.size() != source.annotations.size()) {
        throw ValidationError("record for '" + rec.image_id + "' does not match source annotations");
    }
    GeneratorConfig cfg = base_cfg;
    for (const auto& [k, v] : style_to_parameters(spec.style)) cfg.parameters.emplace(k, v);
    std::vector<InstanceCondition> conditions;
    for (std::size_t b = 0; b < source.annotations.size(); ++b) {
        InstancePrompt p;
        p.text = rec.instance_prompts[b];
        p.category = source.annotations[b].category;
        conditions.push_back({std::move(p), source.annotations[b].box});
    }
    const GlobalPrompt global{rec.global_prompt, TagSet(rec.tags)};
    LabeledImage img = generate_image(source, global, conditions, generator, cfg, rec.domain, rec.image_seed);
    img.id = rec.image_id;
    return img;
}

}  // namespace godiff
