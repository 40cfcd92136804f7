#pragma once

#include <algorithm>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "viplo/formats.hpp"

namespace viplo {

struct CategoryAP {
    int object_class = 0;
    int verb = 0;
    double ap = 0.0;
    std::size_t gt_count = 0;
    std::size_t pred_count = 0;
};

struct MapReport {
    std::vector<CategoryAP> per_category;
    double map = 0.0;
};

namespace detail {

// All-points interpolated AP from a true-positive flag sequence in ranked
// order.
inline double average_precision(const std::vector<int>& tp, std::size_t gt_count) {
    std::vector<double> precision, recall;
    std::size_t tp_acc = 0;
    for (std::size_t i = 0; i < tp.size(); ++i) {
        tp_acc += static_cast<std::size_t>(tp[i]);
        precision.push_back(static_cast<double>(tp_acc) / static_cast<double>(i + 1));
        recall.push_back(static_cast<double>(tp_acc) / static_cast<double>(gt_count));
    }
    // precision envelope, then sum over recall increments
    for (std::size_t i = precision.size(); i-- > 1;)
        precision[i - 1] = std::max(precision[i - 1], precision[i]);
    double ap = 0.0;
    double prev_recall = 0.0;
    for (std::size_t i = 0; i < precision.size(); ++i) {
        ap += (recall[i] - prev_recall) * precision[i];
        prev_recall = recall[i];
    }
    return ap;
}

}  // namespace detail

// IoU-thresholded HOI mAP: per (object class, verb) category, predictions are
// ranked by score (ties keep input order) and greedily matched to unmatched
// ground truth of the same category and image; a match needs both human and
// object IoU >= threshold. mAP averages over categories with ground truth.
inline MapReport evaluate_map(const std::vector<HOIRecord>& predictions,
                              const std::vector<HOIRecord>& ground_truth,
                              double iou_threshold = 0.5) {
    if (ground_truth.empty())
        throw DegenerateInputError("evaluate_map: empty ground truth");
    using Key = std::pair<int, int>;  // (object class, verb)
    std::map<Key, std::vector<std::size_t>> gt_by_cat, pred_by_cat;
    for (std::size_t i = 0; i < ground_truth.size(); ++i)
        gt_by_cat[{ground_truth[i].t.object_class, ground_truth[i].t.verb}].push_back(i);
    for (std::size_t i = 0; i < predictions.size(); ++i)
        pred_by_cat[{predictions[i].t.object_class, predictions[i].t.verb}].push_back(i);

    MapReport report;
    double ap_sum = 0.0;
    for (const auto& [key, gt_idx] : gt_by_cat) {
        CategoryAP cat;
        cat.object_class = key.first;
        cat.verb = key.second;
        cat.gt_count = gt_idx.size();
        std::vector<std::size_t> preds;
        if (auto it = pred_by_cat.find(key); it != pred_by_cat.end()) preds = it->second;
        cat.pred_count = preds.size();
        std::stable_sort(preds.begin(), preds.end(), [&](std::size_t a, std::size_t b) {
            return predictions[a].t.score > predictions[b].t.score;
        });
        std::vector<char> matched(gt_idx.size(), 0);
        std::vector<int> tp(preds.size(), 0);
        for (std::size_t r = 0; r < preds.size(); ++r) {
            const HOIRecord& p = predictions[preds[r]];
            double best = -1.0;
            std::size_t best_g = 0;
            for (std::size_t g = 0; g < gt_idx.size(); ++g) {
                if (matched[g]) continue;
                const HOIRecord& gt = ground_truth[gt_idx[g]];
                if (gt.image_id != p.image_id) continue;
                const double ih = iou(p.t.human, gt.t.human);
                const double io = iou(p.t.object, gt.t.object);
                if (ih < iou_threshold || io < iou_threshold) continue;
                const double q = std::min(ih, io);
                if (q > best) {
                    best = q;
                    best_g = g;
                }
            }
            if (best >= 0.0) {
                matched[best_g] = 1;
                tp[r] = 1;
            }
        }
        cat.ap = preds.empty() ? 0.0 : detail::average_precision(tp, cat.gt_count);
        ap_sum += cat.ap;
        report.per_category.push_back(cat);
    }
    report.map = ap_sum / static_cast<double>(report.per_category.size());
    return report;
}

inline std::string format_map_report(const MapReport& r) {
    std::ostringstream out;
    out << "category_ap:\n";
    for (const CategoryAP& c : r.per_category)
        out << "  object=" << c.object_class << " verb=" << c.verb
            << " ap=" << detail::fmt(c.ap) << " gt=" << c.gt_count
            << " pred=" << c.pred_count << "\n";
    out << "mAP " << detail::fmt(r.map) << "\n";
    return out.str();
}

}  // namespace viplo
