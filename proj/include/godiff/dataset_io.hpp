#pragma once

#include <bit>
#include <cstring>
#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "godiff/base64.hpp"
#include "godiff/dataset.hpp"
#include "godiff/io.hpp"

// Dataset file format: one JSON object per domain.
//
//   { "domain": str, "categories": [str], "images": [
//       { "id": str, "width": int, "height": int,
//         "pixels": base64 of little-endian float32, channel-major,
//         "annotations": [ { "bbox": [x_min, y_min, x_max, y_max],
//                            "category": str, "instance_prompt"?: str } ] } ],
//     "schema_version": 1 }
//
// Keys are emitted sorted and floats in shortest round-trip form, so equal
// datasets serialize to identical bytes.

namespace godiff {

inline constexpr int kDatasetSchemaVersion = 1;

inline std::string encode_pixels(const std::vector<float>& pixels) {
    std::vector<std::uint8_t> bytes(pixels.size() * 4);
    for (std::size_t i = 0; i < pixels.size(); ++i) {
        const auto bits = std::bit_cast<std::uint32_t>(pixels[i]);
        bytes[4 * i + 0] = std::uint8_t(bits);
        bytes[4 * i + 1] = std::uint8_t(bits >> 8);
        bytes[4 * i + 2] = std::uint8_t(bits >> 16);
        bytes[4 * i + 3] = std::uint8_t(bits >> 24);
    }
    return base64::encode(bytes.data(), bytes.size());
}

inline nlohmann::json dataset_to_json(const DomainDataset& ds) {
    nlohmann::json images = nlohmann::json::array();
    for (const auto& img : ds.images) {
        nlohmann::json anns = nlohmann::json::array();
        for (const auto& a : img.annotations) {
            nlohmann::json ja{{"bbox", {a.box.x_min, a.box.y_min, a.box.x_max, a.box.y_max}}, {"category", a.category}};
            if (a.instance_prompt) ja["instance_prompt"] = *a.instance_prompt;
            anns.push_back(std::move(ja));
        }
        images.push_back({{"id", img.id},
                          {"width", img.raster.width},
                          {"height", img.raster.height},
                          {"pixels", encode_pixels(img.raster.pixels)},
                          {"annotations", std::move(anns)}});
    }
    return {{"schema_version", kDatasetSchemaVersion},
            {"domain", ds.domain},
            {"categories", ds.categories},
            {"images", std::move(images)}};
}

inline std::string serialize_dataset(const DomainDataset& ds) { return dataset_to_json(ds).dump(1) + "\n"; }

namespace detail {

inline const nlohmann::json& require(const nlohmann::json& obj, const char* key, const std::string& where) {
    if (!obj.is_object()) throw ParseError(where + ": expected an object");
    auto it = obj.find(key);
    if (it == obj.end()) throw ParseError(where + "." + key + ": missing field");
    return *it;
}

inline std::string require_string(const nlohmann::json& obj, const char* key, const std::string& where) {
    const auto& v = require(obj, key, where);
    if (!v.is_string()) throw ParseError(where + "." + key + ": expected a string");
    return v.get<std::string>();
}

inline int require_int(const nlohmann::json& obj, const char* key, const std::string& where) {
    const auto& v = require(obj, key, where);
    if (!v.is_number_integer()) throw ParseError(where + "." + key + ": expected an integer");
    return v.get<int>();
}

inline const nlohmann::json& require_array(const nlohmann::json& obj, const char* key, const std::string& where) {
    const auto& v = require(obj, key, where);
    if (!v.is_array()) throw ParseError(where + "." + key + ": expected an array");
    return v;
}

inline std::vector<float> decode_pixels(const std::string& text, const std::string& where) {
    auto bytes = base64::decode(text);
    if (!bytes) throw ParseError(where + ": invalid base64");
    if (bytes->size() % 4 != 0) throw ParseError(where + ": byte length not a multiple of 4");
    std::vector<float> out(bytes->size() / 4);
    for (std::size_t i = 0; i < out.size(); ++i) {
        const std::uint32_t bits = std::uint32_t((*bytes)[4 * i]) | (std::uint32_t((*bytes)[4 * i + 1]) << 8) |
                                   (std::uint32_t((*bytes)[4 * i + 2]) << 16) |
                                   (std::uint32_t((*bytes)[4 * i + 3]) << 24);
        out[i] = std::bit_cast<float>(bits);
    }
    return out;
}

}  // namespace detail

/// Parses without validating invariants. Throws ParseError naming the field.
inline DomainDataset dataset_from_json(const nlohmann::json& j) {
    using namespace detail;
    DomainDataset ds;
    ds.domain = require_string(j, "domain", "$");
    for (std::size_t i = 0; const auto& c : require_array(j, "categories", "$")) {
        if (!c.is_string()) throw ParseError("$.categories[" + std::to_string(i) + "]: expected a string");
        ds.categories.push_back(c.get<std::string>());
        ++i;
    }
    const auto& images = require_array(j, "images", "$");
    for (std::size_t i = 0; i < images.size(); ++i) {
        const std::string where = "$.images[" + std::to_string(i) + "]";
        const auto& ji = images[i];
        LabeledImage img;
        img.id = require_string(ji, "id", where);
        img.domain = ds.domain;
        img.raster.width = require_int(ji, "width", where);
        img.raster.height = require_int(ji, "height", where);
        img.raster.pixels = decode_pixels(require_string(ji, "pixels", where), where + ".pixels");
        const auto& anns = require_array(ji, "annotations", where);
        for (std::size_t a = 0; a < anns.size(); ++a) {
            const std::string aw = where + ".annotations[" + std::to_string(a) + "]";
            const auto& ja = anns[a];
            const auto& bbox = require_array(ja, "bbox", aw);
            if (bbox.size() != 4 || !std::all_of(bbox.begin(), bbox.end(), [](const auto& v) { return v.is_number(); })) {
                throw ParseError(aw + ".bbox: expected an array of 4 numbers");
            }
            Annotation ann;
            ann.box = {bbox[0].get<double>(), bbox[1].get<double>(), bbox[2].get<double>(), bbox[3].get<double>()};
            ann.category = require_string(ja, "category", aw);
            if (auto it = ja.find("instance_prompt"); it != ja.end()) {
                if (!it->is_string()) throw ParseError(aw + ".instance_prompt: expected a string");
                ann.instance_prompt = it->get<std::string>();
            }
            img.annotations.push_back(std::move(ann));
        }
        ds.images.push_back(std::move(img));
    }
    return ds;
}

inline DomainDataset parse_dataset(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(std::string("$: malformed JSON: ") + e.what());
    }
    auto ds = dataset_from_json(j);
    validate_dataset(ds);
    return ds;
}

inline DomainDataset load_dataset(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw IoError("dataset file '" + path.string() + "' does not exist");
    return parse_dataset(read_text_file(path));
}

inline void save_dataset(const DomainDataset& ds, const std::filesystem::path& path) {
    validate_dataset(ds);
    write_text_file(path, serialize_dataset(ds));
}

}  // namespace godiff
