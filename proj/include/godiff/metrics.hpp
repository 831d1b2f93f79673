#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "godiff/dataset.hpp"
#include "godiff/error.hpp"
#include "godiff/object_filter.hpp"

namespace godiff {

struct Detection {
    BoundingBox box;
    std::string category;
    double confidence = 0.0;
    std::string image_id;
};

inline double iou(const BoundingBox& a, const BoundingBox& b) noexcept { return box_iou(a, b); }

/// Ground-truth boxes of one category, keyed by image id.
using GroundTruth = std::map<std::string, std::vector<BoundingBox>>;

/// Confidence descending; ties by image id, then input order.
inline std::vector<std::size_t> detection_order(const std::vector<Detection>& dets) {
    std::vector<std::size_t> order(dets.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) {
        if (dets[i].confidence != dets[j].confidence) return dets[i].confidence > dets[j].confidence;
        return dets[i].image_id < dets[j].image_id;
    });
    return order;
}

/// Greedy matching in ranking order: each detection claims the unmatched
/// ground truth with the highest IoU >= threshold (ties to the earlier box).
/// Returns the TP flag of each detection in ranking order.
inline std::vector<bool> match_detections(const std::vector<Detection>& dets, const std::vector<std::size_t>& order,
                                          const GroundTruth& gts, double iou_thresh) {
    std::map<std::string, std::vector<bool>> used;
    for (const auto& [id, boxes] : gts) used[id].assign(boxes.size(), false);
    std::vector<bool> tp;
    tp.reserve(order.size());
    for (auto k : order) {
        const auto& d = dets[k];
        auto it = gts.find(d.image_id);
        if (it == gts.end()) {
            tp.push_back(false);
            continue;
        }
        auto& taken = used[d.image_id];
        double best = -1.0;
        std::size_t best_j = 0;
        for (std::size_t j = 0; j < it->second.size(); ++j) {
            if (taken[j]) continue;
            const double o = iou(d.box, it->second[j]);
            if (o >= iou_thresh && o > best) {
                best = o;
                best_j = j;
            }
        }
        if (best >= 0.0) {
            taken[best_j] = true;
            tp.push_back(true);
        } else {
            tp.push_back(false);
        }
    }
    return tp;
}

/// All-point interpolated AP for a single category: area under the precision
/// envelope, evaluated at each recall step.
inline double average_precision(const std::vector<Detection>& dets, const GroundTruth& gts, double iou_thresh = 0.5) {
    std::size_t n_gt = 0;
    for (const auto& [id, boxes] : gts) n_gt += boxes.size();
    if (n_gt == 0) return dets.empty() ? 1.0 : 0.0;
    if (dets.empty()) return 0.0;

    const auto order = detection_order(dets);
    const auto tp = match_detections(dets, order, gts, iou_thresh);

    // Precision at each prefix that ends on a true positive, i.e. at each recall step.
    std::vector<double> step_precision;
    std::size_t hits = 0;
    for (std::size_t k = 0; k < tp.size(); ++k) {
        if (!tp[k]) continue;
        ++hits;
        step_precision.push_back(static_cast<double>(hits) / static_cast<double>(k + 1));
    }
    // Envelope: best precision at any recall >= this step.
    for (std::size_t i = step_precision.size(); i-- > 1;) {
        step_precision[i - 1] = std::max(step_precision[i - 1], step_precision[i]);
    }
    double ap = 0.0;
    for (double p : step_precision) ap += p / static_cast<double>(n_gt);
    return ap;
}

inline double mean_ap(const std::map<std::string, double>& per_class) {
    if (per_class.empty()) throw ValidationError("mean_ap: no categories with ground truth");
    double s = 0.0;
    for (const auto& [c, ap] : per_class) s += ap;
    return s / static_cast<double>(per_class.size());
}

/// Mean of the per-domain mAP values, skipping the source domain.
inline double mpc(const std::map<std::string, double>& per_domain_map, const std::string& exclude) {
    double s = 0.0;
    std::size_t n = 0;
    for (const auto& [d, m] : per_domain_map) {
        if (d == exclude) continue;
        s += m;
        ++n;
    }
    if (n == 0) throw ValidationError("mpc: no domain left after excluding '" + exclude + "'");
    return s / static_cast<double>(n);
}

/// Biased (V-statistic) squared MMD with an RBF kernel; diagonal terms included.
inline double mmd2(const std::vector<Embedding>& set_a, const std::vector<Embedding>& set_b, double gamma) {
    if (set_a.empty() || set_b.empty()) throw ValidationError("mmd2: both sets must be non-empty");
    const std::size_t dim = set_a.front().dim();
    for (const auto* s : {&set_a, &set_b}) {
        for (const auto& e : *s) {
            if (e.dim() != dim) throw ValidationError("mmd2: embedding dimension mismatch");
        }
    }
    auto mean_kernel = [gamma](const std::vector<Embedding>& x, const std::vector<Embedding>& y) {
        double s = 0.0;
        for (const auto& a : x) {
            for (const auto& b : y) s += rbf_similarity(a, b, gamma);
        }
        return s / (static_cast<double>(x.size()) * static_cast<double>(y.size()));
    };
    const double v = mean_kernel(set_a, set_a) + mean_kernel(set_b, set_b) - 2.0 * mean_kernel(set_a, set_b);
    return std::max(0.0, v);
}

// ---------------------------------------------------------------------------
// Dataset-level evaluation

struct EvalReport {
    std::map<std::string, double> per_class_ap;
    double map = 0.0;
    std::map<std::string, double> per_domain_map;
    /// Set when at least one non-source domain was evaluated.
    std::optional<double> mpc;
};

/// Image ids in detection files are qualified as "<domain>/<image id>".
inline std::string qualified_image_id(const std::string& domain, const std::string& image_id) {
    return domain + "/" + image_id;
}

namespace detail {

inline std::map<std::string, double> per_class_ap(const std::vector<const DomainDataset*>& domains,
                                                  const std::vector<Detection>& dets, double iou_thresh) {
    std::map<std::string, GroundTruth> gt_by_class;
    std::set<std::string> images;
    for (const auto* ds : domains) {
        for (const auto& img : ds->images) {
            const auto qid = qualified_image_id(ds->domain, img.id);
            images.insert(qid);
            for (const auto& a : img.annotations) gt_by_class[a.category][qid].push_back(a.box);
        }
    }
    std::map<std::string, std::vector<Detection>> det_by_class;
    for (const auto& d : dets) {
        if (images.count(d.image_id)) det_by_class[d.category].push_back(d);
    }
    std::map<std::string, double> out;
    for (const auto& [cat, gts] : gt_by_class) {
        out[cat] = average_precision(det_by_class[cat], gts, iou_thresh);
    }
    return out;
}

}  // namespace detail

/// Per-class AP pooled over all domains, per-domain mAP, and mPC over every
/// domain except `source_domain`. Classes without ground truth are skipped.
inline EvalReport evaluate(const std::vector<DomainDataset>& domains, const std::vector<Detection>& dets,
                           double iou_thresh, const std::string& source_domain) {
    for (const auto& d : dets) {
        if (!(d.confidence >= 0.0 && d.confidence <= 1.0)) {
            throw ValidationError("detection on '" + d.image_id + "': confidence outside [0, 1]");
        }
    }
    EvalReport r;
    std::vector<const DomainDataset*> all;
    for (const auto& ds : domains) all.push_back(&ds);
    r.per_class_ap = detail::per_class_ap(all, dets, iou_thresh);
    r.map = r.per_class_ap.empty() ? 0.0 : mean_ap(r.per_class_ap);
    for (const auto& ds : domains) {
        const auto pc = detail::per_class_ap({&ds}, dets, iou_thresh);
        r.per_domain_map[ds.domain] = pc.empty() ? 0.0 : mean_ap(pc);
    }
    const bool has_target = std::any_of(r.per_domain_map.begin(), r.per_domain_map.end(),
                                        [&](const auto& kv) { return kv.first != source_domain; });
    if (has_target) r.mpc = mpc(r.per_domain_map, source_domain);
    return r;
}

}  // namespace godiff
