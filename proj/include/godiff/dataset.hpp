#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "godiff/error.hpp"
#include "godiff/random.hpp"

namespace godiff {

/// Axis-aligned box in pixel coordinates, origin top-left, half-open.
struct BoundingBox {
    double x_min = 0.0;
    double y_min = 0.0;
    double x_max = 0.0;
    double y_max = 0.0;

    double width() const noexcept { return x_max - x_min; }
    double height() const noexcept { return y_max - y_min; }
    double area() const noexcept { return width() * height(); }

    bool operator==(const BoundingBox&) const = default;
};

struct Annotation {
    BoundingBox box;
    std::string category;
    std::optional<std::string> instance_prompt;

    bool operator==(const Annotation&) const = default;
};

/// Three-channel raster, channel-major, values in [0, 1].
struct ImageRaster {
    static constexpr int kChannels = 3;

    int width = 0;
    int height = 0;
    std::vector<float> pixels;

    ImageRaster() = default;
    ImageRaster(int w, int h, float fill = 0.0f)
        : width(w), height(h), pixels(static_cast<std::size_t>(w) * h * kChannels, fill) {}

    std::size_t plane_size() const noexcept { return static_cast<std::size_t>(width) * height; }

    std::size_t offset(int c, int y, int x) const noexcept {
        return static_cast<std::size_t>(c) * plane_size() + static_cast<std::size_t>(y) * width + x;
    }

    float& at(int c, int y, int x) noexcept { return pixels[offset(c, y, x)]; }
    float at(int c, int y, int x) const noexcept { return pixels[offset(c, y, x)]; }

    bool operator==(const ImageRaster&) const = default;
};

struct LabeledImage {
    std::string id;
    ImageRaster raster;
    std::vector<Annotation> annotations;
    std::string domain;

    bool operator==(const LabeledImage&) const = default;
};

struct DomainDataset {
    std::string domain;
    std::vector<std::string> categories;
    std::vector<LabeledImage> images;

    bool has_category(const std::string& c) const {
        return std::find(categories.begin(), categories.end(), c) != categories.end();
    }

    std::size_t annotation_count() const {
        std::size_t n = 0;
        for (const auto& img : images) n += img.annotations.size();
        return n;
    }

    bool operator==(const DomainDataset&) const = default;
};

// ---------------------------------------------------------------------------
// Validation

inline void collect_box_violations(const BoundingBox& b, int width, int height, const std::string& where,
                                   std::vector<std::string>& out) {
    const bool finite = std::isfinite(b.x_min) && std::isfinite(b.y_min) && std::isfinite(b.x_max) &&
                        std::isfinite(b.y_max);
    if (!finite) {
        out.push_back(where + ": non-finite coordinate");
        return;
    }
    if (!(b.x_min < b.x_max)) out.push_back(where + ": x_min must be < x_max");
    if (!(b.y_min < b.y_max)) out.push_back(where + ": y_min must be < y_max");
    if (b.x_min < 0.0 || b.y_min < 0.0 || b.x_max > width || b.y_max > height) {
        out.push_back(where + ": box outside image bounds " + std::to_string(width) + "x" + std::to_string(height));
    }
}

inline std::vector<std::string> raster_violations(const ImageRaster& r, const std::string& where) {
    std::vector<std::string> out;
    if (r.width <= 0 || r.height <= 0) out.push_back(where + ": width and height must be positive");
    const auto expected = static_cast<std::size_t>(std::max(r.width, 0)) * std::max(r.height, 0) * 3;
    if (r.pixels.size() != expected) {
        out.push_back(where + ": pixel array length " + std::to_string(r.pixels.size()) + " != width*height*3 (" +
                      std::to_string(expected) + ")");
    }
    for (std::size_t i = 0; i < r.pixels.size(); ++i) {
        const float v = r.pixels[i];
        if (!(v >= 0.0f && v <= 1.0f)) {
            out.push_back(where + ": pixel " + std::to_string(i) + " outside [0, 1]");
            break;
        }
    }
    return out;
}

/// Every violated invariant, with a location prefix. Empty means valid.
inline std::vector<std::string> dataset_violations(const DomainDataset& ds) {
    std::vector<std::string> out;
    std::set<std::string> registry;
    for (const auto& c : ds.categories) {
        if (c.empty()) out.push_back("categories: empty category name");
        if (!registry.insert(c).second) out.push_back("categories: duplicate category '" + c + "'");
    }
    std::set<std::string> ids;
    for (std::size_t i = 0; i < ds.images.size(); ++i) {
        const auto& img = ds.images[i];
        const std::string where = "images[" + std::to_string(i) + "] (id '" + img.id + "')";
        if (img.id.empty()) out.push_back(where + ": empty id");
        if (!ids.insert(img.id).second) out.push_back(where + ": duplicate id");
        if (img.domain != ds.domain) {
            out.push_back(where + ": domain '" + img.domain + "' differs from dataset domain '" + ds.domain + "'");
        }
        auto rv = raster_violations(img.raster, where);
        out.insert(out.end(), rv.begin(), rv.end());
        for (std::size_t a = 0; a < img.annotations.size(); ++a) {
            const auto& ann = img.annotations[a];
            const std::string aw = where + ".annotations[" + std::to_string(a) + "]";
            collect_box_violations(ann.box, img.raster.width, img.raster.height, aw, out);
            if (!registry.count(ann.category)) {
                out.push_back(aw + ": category '" + ann.category + "' not in registry");
            }
        }
    }
    return out;
}

inline void validate_dataset(const DomainDataset& ds) {
    auto v = dataset_violations(ds);
    if (!v.empty()) throw ValidationError("dataset '" + ds.domain + "' is invalid:", std::move(v));
}

inline void validate_box(const BoundingBox& b, const ImageRaster& r) {
    std::vector<std::string> v;
    collect_box_violations(b, r.width, r.height, "box", v);
    if (!v.empty()) throw ValidationError("invalid bounding box:", std::move(v));
}

// ---------------------------------------------------------------------------
// Raster helpers

/// Integer pixel rectangle covered by a box: floor of the min corner, ceil of
/// the max corner, clipped to the raster.
struct PixelRect {
    int x0 = 0, y0 = 0, x1 = 0, y1 = 0;

    int width() const noexcept { return x1 - x0; }
    int height() const noexcept { return y1 - y0; }
    bool empty() const noexcept { return x1 <= x0 || y1 <= y0; }
};

inline PixelRect pixel_rect(const BoundingBox& box, int width, int height) {
    PixelRect r;
    r.x0 = std::clamp(static_cast<int>(std::floor(box.x_min)), 0, width);
    r.y0 = std::clamp(static_cast<int>(std::floor(box.y_min)), 0, height);
    r.x1 = std::clamp(static_cast<int>(std::ceil(box.x_max)), 0, width);
    r.y1 = std::clamp(static_cast<int>(std::ceil(box.y_max)), 0, height);
    return r;
}

inline ImageRaster crop(const ImageRaster& raster, const BoundingBox& box) {
    validate_box(box, raster);
    const PixelRect r = pixel_rect(box, raster.width, raster.height);
    if (r.empty()) throw ValidationError("crop: box has zero area after rounding");
    ImageRaster out(r.width(), r.height());
    for (int c = 0; c < ImageRaster::kChannels; ++c) {
        for (int y = 0; y < r.height(); ++y) {
            for (int x = 0; x < r.width(); ++x) out.at(c, y, x) = raster.at(c, r.y0 + y, r.x0 + x);
        }
    }
    return out;
}

inline double box_iou(const BoundingBox& a, const BoundingBox& b) noexcept {
    const double iw = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
    const double ih = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
    if (iw <= 0.0 || ih <= 0.0) return 0.0;
    const double inter = iw * ih;
    const double uni = a.area() + b.area() - inter;
    return uni > 0.0 ? inter / uni : 0.0;
}

// ---------------------------------------------------------------------------
// Merge

inline DomainDataset merge_datasets(const std::vector<DomainDataset>& datasets) {
    DomainDataset out;
    out.domain = "merged";
    if (datasets.empty()) return out;
    out.categories = datasets.front().categories;
    const std::set<std::string> reference(out.categories.begin(), out.categories.end());
    for (const auto& ds : datasets) {
        const std::set<std::string> other(ds.categories.begin(), ds.categories.end());
        if (other != reference) {
            std::vector<std::string> diff;
            std::set_symmetric_difference(reference.begin(), reference.end(), other.begin(), other.end(),
                                          std::back_inserter(diff));
            std::string names;
            for (const auto& d : diff) names += (names.empty() ? "" : ", ") + d;
            throw ValidationError("merge: category registry of '" + ds.domain + "' differs from '" +
                                  datasets.front().domain + "' in: " + names);
        }
    }
    for (const auto& ds : datasets) {
        for (const auto& img : ds.images) {
            LabeledImage copy = img;
            copy.id = ds.domain + "/" + img.id;
            copy.domain = out.domain;
            out.images.push_back(std::move(copy));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Toy scene synthesis

struct SynthParams {
    std::uint64_t seed = 0;
    int n_images = 4;
    int width = 64;
    int height = 64;
    int min_boxes = 1;
    int max_boxes = 3;
    std::vector<std::string> categories{"car", "person"};
    std::string domain = "daytime-sunny";
    double max_overlap_iou = 0.3;
    int placement_retries = 64;
};

inline void validate_synth_params(const SynthParams& p) {
    std::vector<std::string> v;
    if (p.n_images < 0) v.push_back("n_images: must be >= 0");
    if (p.width < 16) v.push_back("width: must be >= 16");
    if (p.height < 16) v.push_back("height: must be >= 16");
    if (p.min_boxes < 1) v.push_back("min_boxes: must be >= 1");
    if (p.max_boxes < p.min_boxes) v.push_back("max_boxes: must be >= min_boxes");
    if (p.categories.empty()) v.push_back("categories: must be non-empty");
    if (!v.empty()) throw ValidationError("invalid synth parameters:", std::move(v));
}

namespace detail {

// Per-category base color so that the stub embedder separates classes.
inline std::array<float, 3> category_color(std::size_t category_index, CounterStream& rng) {
    static constexpr std::array<std::array<float, 3>, 6> kPalette{{
        {0.85f, 0.15f, 0.12f},
        {0.15f, 0.35f, 0.85f},
        {0.95f, 0.80f, 0.10f},
        {0.20f, 0.75f, 0.25f},
        {0.60f, 0.20f, 0.70f},
        {0.90f, 0.50f, 0.10f},
    }};
    auto color = kPalette[category_index % kPalette.size()];
    for (auto& ch : color) ch = std::clamp(ch + static_cast<float>(rng.uniform(-0.08, 0.08)), 0.0f, 1.0f);
    return color;
}

}  // namespace detail

/// Flat background with solid axis-aligned rectangles, one annotation each.
/// Deterministic in the parameters; each image draws from its own key so the
/// result does not depend on generation order.
inline DomainDataset synth_toy_dataset(const SynthParams& p, std::vector<std::string>* warnings = nullptr) {
    validate_synth_params(p);
    DomainDataset ds;
    ds.domain = p.domain;
    ds.categories = p.categories;
    ds.images.reserve(static_cast<std::size_t>(p.n_images));

    for (int i = 0; i < p.n_images; ++i) {
        CounterStream rng(derive_seed(p.seed, stable_hash("synth"), static_cast<std::uint64_t>(i)));
        LabeledImage img;
        img.id = "img" + std::to_string(i);
        img.domain = p.domain;
        img.raster = ImageRaster(p.width, p.height);

        // Road-ish neutral background.
        const float base = static_cast<float>(rng.uniform(0.35, 0.65));
        for (int c = 0; c < 3; ++c) {
            const float v = std::clamp(base + static_cast<float>(rng.uniform(-0.05, 0.05)), 0.0f, 1.0f);
            std::fill_n(img.raster.pixels.begin() + static_cast<std::ptrdiff_t>(c * img.raster.plane_size()),
                        img.raster.plane_size(), v);
        }

        const int wanted = p.min_boxes + static_cast<int>(rng.index(static_cast<std::uint64_t>(p.max_boxes - p.min_boxes + 1)));
        const int min_side = std::max(3, std::min(p.width, p.height) / 8);
        const int max_w = std::max(min_side + 1, p.width / 3);
        const int max_h = std::max(min_side + 1, p.height / 3);

        for (int b = 0; b < wanted; ++b) {
            bool placed = false;
            for (int attempt = 0; attempt < p.placement_retries && !placed; ++attempt) {
                const int w = min_side + static_cast<int>(rng.index(static_cast<std::uint64_t>(max_w - min_side + 1)));
                const int h = min_side + static_cast<int>(rng.index(static_cast<std::uint64_t>(max_h - min_side + 1)));
                const int x = static_cast<int>(rng.index(static_cast<std::uint64_t>(p.width - w + 1)));
                const int y = static_cast<int>(rng.index(static_cast<std::uint64_t>(p.height - h + 1)));
                const BoundingBox box{double(x), double(y), double(x + w), double(y + h)};
                const bool clash = std::any_of(img.annotations.begin(), img.annotations.end(), [&](const Annotation& a) {
                    if (box_iou(a.box, box) > p.max_overlap_iou) return true;
                    // Keep every object at least half visible.
                    const double iw = std::min(a.box.x_max, box.x_max) - std::max(a.box.x_min, box.x_min);
                    const double ih = std::min(a.box.y_max, box.y_max) - std::max(a.box.y_min, box.y_min);
                    const double inter = (iw > 0 && ih > 0) ? iw * ih : 0.0;
                    return inter > 0.5 * std::min(a.box.area(), box.area());
                });
                if (clash) continue;

                const std::size_t cat = rng.index(p.categories.size());
                const auto color = detail::category_color(cat, rng);
                for (int c = 0; c < 3; ++c) {
                    for (int yy = y; yy < y + h; ++yy) {
                        for (int xx = x; xx < x + w; ++xx) img.raster.at(c, yy, xx) = color[static_cast<std::size_t>(c)];
                    }
                }
                img.annotations.push_back(Annotation{box, p.categories[cat], std::nullopt});
                placed = true;
            }
            if (!placed) {
                if (warnings) {
                    warnings->push_back(img.id + ": placed " + std::to_string(img.annotations.size()) + " of " +
                                        std::to_string(wanted) + " boxes after bounded retries");
                }
                break;
            }
        }
        ds.images.push_back(std::move(img));
    }
    return ds;
}

}  // namespace godiff
