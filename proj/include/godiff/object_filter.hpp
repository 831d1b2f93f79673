#pragma once

#include <cmath>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "godiff/dataset.hpp"
#include "godiff/error.hpp"
#include "godiff/ptdg.hpp"

// Object filtering: compare each source box against the same box in a
// pseudo-source image (the source restyled toward its own domain) and keep
// the boxes whose region embeddings stay kernel-similar.

namespace godiff {

struct Embedding {
    std::vector<double> values;

    std::size_t dim() const noexcept { return values.size(); }
    bool operator==(const Embedding&) const = default;
};

class Embedder {
public:
    virtual ~Embedder() = default;
    virtual std::string id() const = 0;
    virtual std::size_t dim() const = 0;
    virtual Embedding embed(const ImageRaster& region) const = 0;
};

/// Hand-built 18-d region descriptor:
///   [0..3)   per-channel mean
///   [3..6)   per-channel population std
///   [6..15)  per-channel 3-bin histogram (fractions; bins [0,1/3), [1/3,2/3), [2/3,1])
///   [15..18) per-channel gradient energy (mean squared forward difference)
/// Every feature is an average, so the embedding does not depend on crop size.
class StubEmbedder final : public Embedder {
public:
    static constexpr std::size_t kDim = 18;

    std::string id() const override { return "stub"; }
    std::size_t dim() const override { return kDim; }

    Embedding embed(const ImageRaster& r) const override {
        Embedding e;
        e.values.assign(kDim, 0.0);
        const std::size_t n = r.plane_size();
        if (n == 0) throw ValidationError("StubEmbedder: empty region");
        for (int c = 0; c < 3; ++c) {
            const auto cc = static_cast<std::size_t>(c);
            double sum = 0.0;
            std::array<double, 3> hist{};
            for (int y = 0; y < r.height; ++y) {
                for (int x = 0; x < r.width; ++x) {
                    const double v = r.at(c, y, x);
                    sum += v;
                    hist[v < 1.0 / 3.0 ? 0 : (v < 2.0 / 3.0 ? 1 : 2)] += 1.0;
                }
            }
            const double mean = sum / static_cast<double>(n);
            double var = 0.0, grad = 0.0;
            std::size_t grad_terms = 0;
            for (int y = 0; y < r.height; ++y) {
                for (int x = 0; x < r.width; ++x) {
                    const double v = r.at(c, y, x);
                    var += (v - mean) * (v - mean);
                    if (x + 1 < r.width) {
                        const double d = r.at(c, y, x + 1) - v;
                        grad += d * d;
                        ++grad_terms;
                    }
                    if (y + 1 < r.height) {
                        const double d = r.at(c, y + 1, x) - v;
                        grad += d * d;
                        ++grad_terms;
                    }
                }
            }
            e.values[cc] = mean;
            e.values[3 + cc] = std::sqrt(var / static_cast<double>(n));
            for (std::size_t k = 0; k < 3; ++k) e.values[6 + 3 * cc + k] = hist[k] / static_cast<double>(n);
            e.values[15 + cc] = grad_terms ? grad / static_cast<double>(grad_terms) : 0.0;
        }
        return e;
    }
};

inline std::unique_ptr<Embedder> make_embedder(const std::string& id) {
    if (id == "stub") return std::make_unique<StubEmbedder>();
    throw ValidationError("unknown embedder '" + id + "' (expected stub)");
}

inline Embedding embed_region(const LabeledImage& image, const BoundingBox& box, const Embedder& embedder) {
    Embedding e = embedder.embed(crop(image.raster, box));
    if (e.dim() != embedder.dim()) {
        throw ContractViolation("embedder '" + embedder.id() + "' returned dimension " + std::to_string(e.dim()) +
                                ", declared " + std::to_string(embedder.dim()));
    }
    for (double v : e.values) {
        if (!std::isfinite(v)) throw ContractViolation("embedder '" + embedder.id() + "' returned a non-finite value");
    }
    return e;
}

/// exp(-gamma * |a - b|^2).
inline double rbf_similarity(const Embedding& a, const Embedding& b, double gamma) {
    if (a.dim() != b.dim()) {
        throw ValidationError("rbf_similarity: dimension mismatch " + std::to_string(a.dim()) + " vs " +
                              std::to_string(b.dim()));
    }
    if (!(gamma > 0.0)) throw ValidationError("rbf_similarity: gamma must be > 0");
    double d2 = 0.0;
    for (std::size_t i = 0; i < a.dim(); ++i) {
        const double d = a.values[i] - b.values[i];
        d2 += d * d;
    }
    return std::exp(-gamma * d2);
}

enum class FilterMode {
    /// keep s >= tau: similar objects survive
    intent,
    /// keep s <= tau
    paper_literal,
};

inline std::string to_string(FilterMode m) { return m == FilterMode::intent ? "intent" : "paper-literal"; }

inline FilterMode parse_filter_mode(const std::string& s) {
    if (s == "intent") return FilterMode::intent;
    if (s == "paper-literal") return FilterMode::paper_literal;
    throw ValidationError("filter mode must be intent|paper-literal, got '" + s + "'");
}

struct FilterConfig {
    double gamma = 0.5;
    double tau = 0.8;
    FilterMode mode = FilterMode::intent;

    void validate() const {
        std::vector<std::string> v;
        if (!(gamma > 0.0)) v.push_back("filter.gamma: must be > 0");
        if (mode == FilterMode::intent && !(tau > 0.0 && tau <= 1.0)) v.push_back("filter.tau: must be in (0, 1] in intent mode");
        if (!std::isfinite(tau)) v.push_back("filter.tau: must be finite");
        if (!v.empty()) throw ValidationError("invalid filter config:", std::move(v));
    }
};

/// Retention rule on one similarity. Ties are kept in both modes.
inline bool retains(double similarity, double tau, FilterMode mode) noexcept {
    return mode == FilterMode::intent ? similarity >= tau : similarity <= tau;
}

inline std::vector<std::size_t> retained_indices(const std::vector<double>& similarities, double tau, FilterMode mode) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < similarities.size(); ++i) {
        if (retains(similarities[i], tau, mode)) out.push_back(i);
    }
    return out;
}

/// Per-box similarity between a source image and its pseudo-source twin.
inline std::vector<double> box_similarities(const LabeledImage& source_img, const LabeledImage& pseudo_source_img,
                                            double gamma, const Embedder& embedder) {
    if (source_img.annotations != pseudo_source_img.annotations) {
        throw ValidationError("filter: annotations of '" + source_img.id + "' differ from its pseudo-source image '" +
                              pseudo_source_img.id + "'");
    }
    std::vector<double> sims;
    sims.reserve(source_img.annotations.size());
    for (const auto& ann : source_img.annotations) {
        sims.push_back(rbf_similarity(embed_region(source_img, ann.box, embedder),
                                      embed_region(pseudo_source_img, ann.box, embedder), gamma));
    }
    return sims;
}

/// Retained annotations, in source order.
inline std::vector<Annotation> filter_boxes(const LabeledImage& source_img, const LabeledImage& pseudo_source_img,
                                            const FilterConfig& cfg, const Embedder& embedder) {
    const auto sims = box_similarities(source_img, pseudo_source_img, cfg.gamma, embedder);
    std::vector<Annotation> out;
    for (auto i : retained_indices(sims, cfg.tau, cfg.mode)) out.push_back(source_img.annotations[i]);
    return out;
}

/// The source restyled toward its own domain through the regular generation
/// path; used as the comparison anchor for filtering.
inline DomainDataset build_pseudo_source(const DomainDataset& source, const DescriptorSets& descriptors,
                                         const Generator& generator, const GeneratorConfig& cfg,
                                         const GenerationOptions& opts = {}) {
    const auto specs = builtin_style_specs();
    StyleDomainSpec spec;
    if (auto it = specs.find(source.domain); it != specs.end()) {
        spec = it->second;
    } else {
        spec.name = source.domain;
        spec.domain_tags = TagSet{"daytime"};
        spec.style = specs.at("daytime-sunny").style;
    }
    spec.name = "pseudo-" + source.domain;
    GenerationOptions one = opts;
    one.images_per_source = 1;
    return generate_pseudo_domain(source, spec, descriptors, generator, cfg, one);
}

/// Replaces each pseudo-domain image's annotations by the retained list of its
/// source image. Images with nothing retained stay, with zero annotations.
inline std::vector<DomainDataset> apply_filter_to_domains(const std::vector<DomainDataset>& pseudo_domains,
                                                          const std::map<std::string, std::vector<Annotation>>& retained) {
    std::vector<DomainDataset> out = pseudo_domains;
    for (auto& ds : out) {
        for (auto& img : ds.images) {
            auto it = retained.find(source_image_id(img.id));
            if (it == retained.end()) {
                throw ValidationError("apply_filter: image '" + img.id + "' of domain '" + ds.domain +
                                      "' has no retained-box entry");
            }
            img.annotations = it->second;
        }
    }
    return out;
}

}  // namespace godiff
