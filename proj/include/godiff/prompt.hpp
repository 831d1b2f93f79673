#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "godiff/dataset.hpp"
#include "godiff/error.hpp"
#include "godiff/random.hpp"

namespace godiff {

/// Ordered set of lowercase tags. Insertion order is kept so that decoding is
/// deterministic.
class TagSet {
public:
    TagSet() = default;
    TagSet(std::initializer_list<std::string_view> tags) {
        for (auto t : tags) insert(t);
    }
    explicit TagSet(const std::vector<std::string>& tags) {
        for (const auto& t : tags) insert(t);
    }

    /// Lowercases and trims; empty tags are rejected, duplicates ignored.
    /// Returns true when the tag was new.
    bool insert(std::string_view raw) {
        std::string tag = normalize(raw);
        if (tag.empty()) throw ValidationError("TagSet: empty tag");
        if (contains(tag)) return false;
        tags_.push_back(std::move(tag));
        return true;
    }

    bool contains(std::string_view tag) const {
        return std::find(tags_.begin(), tags_.end(), tag) != tags_.end();
    }

    const std::vector<std::string>& tags() const noexcept { return tags_; }
    std::size_t size() const noexcept { return tags_.size(); }
    bool empty() const noexcept { return tags_.empty(); }
    auto begin() const noexcept { return tags_.begin(); }
    auto end() const noexcept { return tags_.end(); }

    bool operator==(const TagSet&) const = default;

    static std::string normalize(std::string_view raw) {
        auto first = raw.find_first_not_of(" \t\r\n");
        if (first == std::string_view::npos) return {};
        auto last = raw.find_last_not_of(" \t\r\n");
        std::string out(raw.substr(first, last - first + 1));
        for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        return out;
    }

private:
    std::vector<std::string> tags_;
};

/// Source tags first, then unseen domain tags in their order.
inline TagSet augment_tags(const TagSet& source, const TagSet& domain) {
    TagSet out = source;
    for (const auto& t : domain) out.insert(t);
    return out;
}

// ---------------------------------------------------------------------------
// Tagging

class Tagger {
public:
    virtual ~Tagger() = default;
    virtual std::string id() const = 0;
    virtual TagSet tag(const LabeledImage& image) const = 0;
};

/// Rule-based tagger: luminance class, dominant color name, and "street".
class StubTagger final : public Tagger {
public:
    std::string id() const override { return "stub"; }

    TagSet tag(const LabeledImage& image) const override {
        const auto mean = mean_rgb(image.raster);
        const double lum = 0.2126 * mean[0] + 0.7152 * mean[1] + 0.0722 * mean[2];
        TagSet tags;
        tags.insert(lum >= 0.5 ? "bright" : "dim");
        tags.insert(color_name(mean, lum));
        tags.insert("street");
        return tags;
    }

    static std::array<double, 3> mean_rgb(const ImageRaster& r) {
        std::array<double, 3> m{};
        const std::size_t n = r.plane_size();
        for (int c = 0; c < 3; ++c) {
            double s = 0.0;
            for (std::size_t i = 0; i < n; ++i) s += r.pixels[c * n + i];
            m[static_cast<std::size_t>(c)] = n ? s / static_cast<double>(n) : 0.0;
        }
        return m;
    }

    static std::string color_name(const std::array<double, 3>& rgb, double lum) {
        const double hi = std::max({rgb[0], rgb[1], rgb[2]});
        const double lo = std::min({rgb[0], rgb[1], rgb[2]});
        if (hi - lo < 0.1) {
            if (lum >= 0.8) return "white";
            if (lum < 0.2) return "black";
            return "gray";
        }
        // Hue in degrees, HSV convention.
        double h;
        const double d = hi - lo;
        if (hi == rgb[0]) {
            h = 60.0 * std::fmod((rgb[1] - rgb[2]) / d, 6.0);
        } else if (hi == rgb[1]) {
            h = 60.0 * ((rgb[2] - rgb[0]) / d + 2.0);
        } else {
            h = 60.0 * ((rgb[0] - rgb[1]) / d + 4.0);
        }
        if (h < 0) h += 360.0;
        static constexpr std::array<std::pair<double, const char*>, 8> kHues{{
            {15, "red"}, {45, "orange"}, {70, "yellow"}, {160, "green"},
            {200, "cyan"}, {260, "blue"}, {300, "purple"}, {340, "magenta"},
        }};
        for (const auto& [limit, name] : kHues) {
            if (h < limit) return name;
        }
        return "red";
    }
};

inline TagSet extract_tags(const LabeledImage& image, const Tagger& tagger) { return tagger.tag(image); }

inline std::unique_ptr<Tagger> make_tagger(const std::string& id) {
    if (id == "stub") return std::make_unique<StubTagger>();
    throw ValidationError("unknown tagger '" + id + "'");
}

// ---------------------------------------------------------------------------
// Global prompt decoding

struct GlobalPrompt {
    std::string text;
    TagSet source_tags;

    bool operator==(const GlobalPrompt&) const = default;
};

enum class TagBucket { style, lighting, place, time, other };

/// Keyword map for the template decoder. Anything not listed lands in `other`.
inline TagBucket classify_tag(std::string_view tag) {
    static const std::set<std::string, std::less<>> style{
        "cityscapes", "realistic", "photorealistic", "cinematic", "vintage", "aerial", "urban", "dashcam"};
    static const std::set<std::string, std::less<>> lighting{
        "dark",  "bright", "dim",   "sunny", "foggy", "rainy",  "misty",  "overcast", "cloudy", "snowy",
        "hazy",  "gloomy", "wet",   "white", "black", "gray",   "red",    "orange",   "yellow", "green",
        "cyan",  "blue",   "purple", "magenta", "clear", "stormy"};
    static const std::set<std::string, std::less<>> place{
        "street", "road", "highway", "city", "intersection", "avenue", "town", "bridge", "tunnel", "crossroad"};
    static const std::set<std::string, std::less<>> time{
        "night", "day", "daytime", "dusk", "dawn", "morning", "evening", "noon", "sunset", "twilight", "sunrise"};
    if (style.count(tag)) return TagBucket::style;
    if (lighting.count(tag)) return TagBucket::lighting;
    if (place.count(tag)) return TagBucket::place;
    if (time.count(tag)) return TagBucket::time;
    return TagBucket::other;
}

/// Template decoder: "a {style} photo of a {lighting} {place} during {time}".
/// Empty buckets drop their slot ("a photo", "scene", no "during" clause);
/// unclassified tags follow as a comma list.
inline GlobalPrompt decode_prompt(const TagSet& tags) {
    if (tags.empty()) throw ValidationError("decode_prompt: tag set is empty");
    std::vector<std::string> style, lighting, place, time, other;
    for (const auto& t : tags) {
        switch (classify_tag(t)) {
            case TagBucket::style: style.push_back(t); break;
            case TagBucket::lighting: lighting.push_back(t); break;
            case TagBucket::place: place.push_back(t); break;
            case TagBucket::time: time.push_back(t); break;
            case TagBucket::other: other.push_back(t); break;
        }
    }
    auto join = [](const std::vector<std::string>& v, std::string_view sep) {
        std::string out;
        for (std::size_t i = 0; i < v.size(); ++i) {
            if (i) out += sep;
            out += v[i];
        }
        return out;
    };

    std::string text = "a ";
    if (!style.empty()) text += join(style, " ") + " ";
    text += "photo of a ";
    if (!lighting.empty()) text += join(lighting, " ") + " ";
    text += place.empty() ? std::string("scene") : join(place, " and ");
    if (!time.empty()) text += " during " + join(time, " and ");
    if (!other.empty()) text += ", " + join(other, ", ");
    return GlobalPrompt{std::move(text), tags};
}

// ---------------------------------------------------------------------------
// Instance prompts

struct DescriptorSets {
    std::vector<std::string> objects;
    std::vector<std::string> actions;
    std::vector<std::string> weather;
    std::vector<std::string> scenes;
    std::vector<std::string> times;
    /// category -> object descriptors that may stand in for it.
    std::map<std::string, std::vector<std::string>> consistency;

    void validate() const {
        std::vector<std::string> v;
        if (objects.empty()) v.push_back("objects: must be non-empty");
        if (actions.empty()) v.push_back("actions: must be non-empty");
        if (weather.empty()) v.push_back("weather: must be non-empty");
        if (scenes.empty()) v.push_back("scenes: must be non-empty");
        if (times.empty()) v.push_back("times: must be non-empty");
        if (!v.empty()) throw ValidationError("invalid descriptor sets:", std::move(v));
    }

    /// Subset of `objects` registered for the category, in `objects` order.
    std::vector<std::string> consistent_objects(const std::string& category) const {
        auto it = consistency.find(category);
        if (it == consistency.end()) {
            throw ValidationError("no object descriptors registered for category '" + category + "'");
        }
        std::vector<std::string> out;
        for (const auto& o : objects) {
            if (std::find(it->second.begin(), it->second.end(), o) != it->second.end()) out.push_back(o);
        }
        if (out.empty()) {
            throw ValidationError("no object descriptor in the object set is consistent with category '" + category + "'");
        }
        return out;
    }

    bool operator==(const DescriptorSets&) const = default;
};

/// Defaults covering the toy categories and the usual driving-scene classes.
inline DescriptorSets default_descriptor_sets() {
    DescriptorSets d;
    d.objects = {"black car", "yellow taxi", "white sedan", "red car",   "pedestrian", "person in a coat",
                 "jogger",    "red bus",     "school bus",  "city bus",  "cyclist",    "bicycle",
                 "motorbike", "scooter",     "rider",       "box truck", "pickup truck"};
    d.actions = {"parked", "moving", "waiting", "turning"};
    d.weather = {"foggy", "rainy", "sunny", "snowy"};
    d.scenes = {"street", "road", "intersection", "highway"};
    d.times = {"the night", "the day", "dusk", "dawn"};
    d.consistency = {
        {"car", {"black car", "yellow taxi", "white sedan", "red car"}},
        {"person", {"pedestrian", "person in a coat", "jogger"}},
        {"bus", {"red bus", "school bus", "city bus"}},
        {"bike", {"cyclist", "bicycle"}},
        {"motor", {"motorbike", "scooter"}},
        {"rider", {"rider", "cyclist"}},
        {"truck", {"box truck", "pickup truck"}},
    };
    return d;
}

struct InstancePrompt {
    std::string text;
    std::string object;
    std::string action;
    std::string weather;
    std::string scene;
    std::string time;
    std::string category;

    bool operator==(const InstancePrompt&) const = default;
};

inline std::string render_instance_prompt(const InstancePrompt& p) {
    return "A " + p.object + " is " + p.action + " in a " + p.weather + " " + p.scene + " during " + p.time + ".";
}

/// Draws one descriptor per set, uniformly and independently. Draw k reads
/// counter k of the generator keyed by `seed`.
inline InstancePrompt gen_instance_prompt(const DescriptorSets& sets, const std::string& category, std::uint64_t seed) {
    sets.validate();
    const auto objects = sets.consistent_objects(category);
    const CounterRng rng(seed);
    InstancePrompt p;
    p.category = category;
    p.object = objects[rng.index(0, objects.size())];
    p.action = sets.actions[rng.index(1, sets.actions.size())];
    p.weather = sets.weather[rng.index(2, sets.weather.size())];
    p.scene = sets.scenes[rng.index(3, sets.scenes.size())];
    p.time = sets.times[rng.index(4, sets.times.size())];
    p.text = render_instance_prompt(p);
    return p;
}

/// Seed for box `box_index` of image `image_id` under `global_seed`.
inline std::uint64_t instance_prompt_seed(std::uint64_t global_seed, std::string_view domain, std::string_view image_id,
                                          std::size_t box_index) {
    return derive_seed(global_seed, stable_hash("instance-prompt"), stable_hash(domain), stable_hash(image_id),
                       static_cast<std::uint64_t>(box_index));
}

}  // namespace godiff
