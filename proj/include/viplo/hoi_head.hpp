#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "viplo/pose_graph.hpp"

namespace viplo {

struct HOITriplet {
    Box human, object;
    int object_class = 0;
    int verb = 0;
    double score = 0.0;
};

// Per-pair verb scores: MBF over the final node pair conditioned on the edge,
// then a sigmoid verb classifier.
inline Tensor pair_logits(const GraphState& state, std::size_t pair_index,
                          const GraphParams& gp) {
    check(pair_index < state.pairs.size(), "pair_logits: pair index out of range");
    const auto [hi, oj] = state.pairs[pair_index];
    const Tensor rep =
        mbf_fuse(detail::concat(state.human_enc[hi], state.object_enc[oj]),
                 state.edge_enc[pair_index], gp.mbf_classifier);
    Tensor r = rep;
    r.shape = {1, rep.size()};
    Tensor s = matmul(r, gp.verb_w);
    for (std::size_t v = 0; v < s.size(); ++v)
        s.data[v] = static_cast<float>(
            sigmoid(static_cast<double>(s.data[v]) + gp.verb_b.data[v]));
    s.shape = {s.size()};
    return s;
}

// s_k = (s_h)^lambda * (s_o)^lambda * s_verb
inline double compose_final_score(double s_h, double s_o, double s_verb,
                                  double lambda) {
    return std::pow(s_h, lambda) * std::pow(s_o, lambda) * s_verb;
}

struct FocalResult {
    double loss = 0.0;
    double grad = 0.0;  // d loss / d y_hat
};

inline FocalResult focal_loss(double y_hat, int y, double alpha, double gamma) {
    constexpr double eps = 1e-7;
    y_hat = std::clamp(y_hat, eps, 1.0 - eps);
    FocalResult r;
    if (y == 1) {
        const double q = 1.0 - y_hat;
        r.loss = -alpha * std::pow(q, gamma) * std::log(y_hat);
        r.grad = alpha * (gamma * std::pow(q, gamma - 1.0) * std::log(y_hat) -
                          std::pow(q, gamma) / y_hat);
    } else {
        const double q = 1.0 - y_hat;
        r.loss = -(1.0 - alpha) * std::pow(y_hat, gamma) * std::log(q);
        r.grad = -(1.0 - alpha) * (gamma * std::pow(y_hat, gamma - 1.0) * std::log(q) -
                                   std::pow(y_hat, gamma) / q);
    }
    return r;
}

// Sum of focal losses over a pair/class label matrix, normalized by the
// number of positives (at least one).
inline double focal_loss_total(const std::vector<double>& scores,
                               const std::vector<int>& labels, double alpha,
                               double gamma) {
    check(scores.size() == labels.size(), "focal_loss_total size mismatch");
    double total = 0.0;
    std::size_t positives = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        total += focal_loss(scores[i], labels[i], alpha, gamma).loss;
        if (labels[i] == 1) ++positives;
    }
    return total / static_cast<double>(std::max<std::size_t>(positives, 1));
}

// Greedy per-class NMS. Returns indices of kept detections, in input order.
inline std::vector<std::size_t> nms(const std::vector<Detection>& dets,
                                    double iou_threshold, double score_threshold) {
    std::vector<std::size_t> order(dets.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return dets[a].score > dets[b].score;
    });
    std::vector<std::size_t> kept;
    for (const std::size_t i : order) {
        if (dets[i].score < score_threshold) continue;
        bool suppressed = false;
        for (const std::size_t k : kept) {
            if (dets[k].class_id == dets[i].class_id &&
                iou(dets[k].box, dets[i].box) > iou_threshold) {
                suppressed = true;
                break;
            }
        }
        if (!suppressed) kept.push_back(i);
    }
    std::sort(kept.begin(), kept.end());
    return kept;
}

// Emits one triplet per (pair, verb) with composed score above the threshold,
// sorted by descending score (ties keep pair-then-verb order).
inline std::vector<HOITriplet> emit_triplets(const GraphState& state,
                                             const std::vector<Detection>& dets,
                                             const GraphParams& gp, double lambda,
                                             double score_threshold = 0.0) {
    std::vector<HOITriplet> out;
    for (std::size_t e = 0; e < state.pairs.size(); ++e) {
        const auto [hi, oj] = state.pairs[e];
        const Detection& human = dets[state.human_det[hi]];
        const Detection& object = dets[oj];
        const Tensor verbs = pair_logits(state, e, gp);
        for (std::size_t v = 0; v < verbs.size(); ++v) {
            const double s =
                compose_final_score(human.score, object.score, verbs.data[v], lambda);
            if (s > score_threshold)
                out.push_back(HOITriplet{human.box, object.box, object.class_id,
                                         static_cast<int>(v), s});
        }
    }
    std::stable_sort(out.begin(), out.end(),
                     [](const HOITriplet& a, const HOITriplet& b) {
                         return a.score > b.score;
                     });
    return out;
}

}  // namespace viplo
