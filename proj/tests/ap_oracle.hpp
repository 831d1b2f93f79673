#pragma once

#include <algorithm>
#include <map>
#include <tuple>
#include <vector>

#include "godiff/metrics.hpp"

namespace godiff::test {

/// Reference AP by explicit prefix enumeration. Recall is tracked as an integer
/// hit count; for each recall level j/n_gt the interpolated precision is the
/// best precision of any prefix reaching at least j hits.
inline double brute_force_ap(const std::vector<Detection>& dets, const GroundTruth& gts, double thresh) {
    std::size_t n_gt = 0;
    for (const auto& [id, b] : gts) n_gt += b.size();
    if (n_gt == 0) return dets.empty() ? 1.0 : 0.0;

    std::vector<std::size_t> rank(dets.size());
    for (std::size_t i = 0; i < rank.size(); ++i) rank[i] = i;
    std::sort(rank.begin(), rank.end(), [&](std::size_t i, std::size_t j) {
        return std::make_tuple(-dets[i].confidence, dets[i].image_id, i) <
               std::make_tuple(-dets[j].confidence, dets[j].image_id, j);
    });

    std::map<std::string, std::vector<bool>> taken;
    std::vector<std::pair<std::size_t, std::size_t>> prefixes;  // (hits, length)
    std::size_t hits = 0;
    for (std::size_t k = 0; k < rank.size(); ++k) {
        const auto& d = dets[rank[k]];
        auto it = gts.find(d.image_id);
        if (it != gts.end()) {
            auto& t = taken[d.image_id];
            t.resize(it->second.size(), false);
            std::size_t best = it->second.size();
            double best_iou = thresh;
            for (std::size_t g = 0; g < it->second.size(); ++g) {
                const auto& b = it->second[g];
                const double ix = std::max(0.0, std::min(d.box.x_max, b.x_max) - std::max(d.box.x_min, b.x_min));
                const double iy = std::max(0.0, std::min(d.box.y_max, b.y_max) - std::max(d.box.y_min, b.y_min));
                const double inter = ix * iy;
                const double o = inter / (d.box.area() + b.area() - inter);
                if (!t[g] && o >= thresh && (best == it->second.size() || o > best_iou)) {
                    best = g;
                    best_iou = o;
                }
            }
            if (best < it->second.size()) {
                t[best] = true;
                ++hits;
            }
        }
        prefixes.emplace_back(hits, k + 1);
    }

    double ap = 0.0;
    for (std::size_t j = 1; j <= n_gt; ++j) {
        double best = 0.0;
        for (const auto& [h, len] : prefixes) {
            if (h >= j) best = std::max(best, static_cast<double>(h) / static_cast<double>(len));
        }
        ap += best / static_cast<double>(n_gt);
    }
    return ap;
}

}  // namespace godiff::test
