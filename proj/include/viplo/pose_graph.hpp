#pragma once

#include <cmath>
#include <optional>
#include <utility>
#include <vector>

#include "viplo/geometry.hpp"
#include "viplo/local_features.hpp"
#include "viplo/tensor.hpp"

namespace viplo {

struct Detection {
    Box box;
    int class_id = 0;
    double score = 0.0;
};

constexpr int kPersonClass = 0;
constexpr int kSpatialFeatureDim = 18;
constexpr int kJointFeatureDim = 6;

// Multi-branch fusion: each branch projects the appearance and edge vectors
// to a shared sub-dimension, multiplies element-wise and applies GELU; branch
// outputs are concatenated and projected to the node dimension.
struct MbfParams {
    std::vector<Tensor> app_w, app_b;    // per branch: [d_app, sub], [sub]
    std::vector<Tensor> edge_w, edge_b;  // per branch: [d_edge, sub], [sub]
    Tensor out_w, out_b;                 // [branches*sub, d_out], [d_out]

    std::size_t branches() const { return app_w.size(); }
};

struct GraphParams {
    MlpSpec node_encoder;    // 2 layers: C -> C_node -> C_node
    MlpSpec edge_encoder;    // 3 layers: 18 -> C_edge -> C_edge -> C_edge
    MlpSpec joint_q;         // 18 -> d_att
    MlpSpec joint_k;         // 6 -> d_att
    MlpSpec local_projector; // 1 layer: C -> C_node
    MbfParams mbf_obj_to_human;  // appearance in = 2*C_node
    MbfParams mbf_human_to_obj;  // appearance in = C_node
    MbfParams mbf_classifier;    // appearance in = 2*C_node
    Tensor node_ln_gain, node_ln_shift;  // [C_node]
    Tensor verb_w, verb_b;               // [C_node, V], [V]
    int steps = 2;
};

struct GraphState {
    std::vector<std::size_t> human_det;   // detection index per human node
    std::vector<Tensor> human_enc;        // x_i
    std::vector<Tensor> object_enc;       // y_j, one per detection
    std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (human node, detection)
    std::vector<Tensor> edge_enc;    // z_ij per pair
    std::vector<Tensor> joint_alpha; // [17] per pair, fixed across steps
    std::vector<Tensor> pair_local;  // x_{ij,local} per pair, fixed across steps
    int step = 0;
};

inline Tensor init_node_encoding(const Tensor& region_feature,
                                 const MlpSpec& encoder) {
    Tensor x = region_feature;
    x.shape = {1, region_feature.size()};
    Tensor out = mlp_forward(encoder, x);
    out.shape = {out.size()};
    return out;
}

// 18-dim pairwise spatial feature in normalized image coordinates, every
// component clipped to [-2, 2].
inline Tensor spatial_pair_features(const Box& h, const Box& o, double image_w,
                                    double image_h) {
    const double diag = std::sqrt(image_w * image_w + image_h * image_h);
    const double img_area = image_w * image_h;
    const double eps = 1e-9;
    Tensor f({kSpatialFeatureDim});
    std::size_t i = 0;
    auto put = [&](double v) { f.data[i++] = static_cast<float>(std::clamp(v, -2.0, 2.0)); };
    put(h.cx() / image_w);
    put(h.cy() / image_h);
    put(h.width() / image_w);
    put(h.height() / image_h);
    put(o.cx() / image_w);
    put(o.cy() / image_h);
    put(o.width() / image_w);
    put(o.height() / image_h);
    put((o.cx() - h.cx()) / image_w);
    put((o.cy() - h.cy()) / image_h);
    put(std::hypot(o.cx() - h.cx(), o.cy() - h.cy()) / diag);
    put(iou(h, o));
    put(h.area() / img_area);
    put(o.area() / img_area);
    put(o.area() / std::max(h.area(), eps));
    const Box uni{std::min(h.x1, o.x1), std::min(h.y1, o.y1), std::max(h.x2, o.x2),
                  std::max(h.y2, o.y2)};
    put(uni.width() / image_w);
    put(uni.height() / image_h);
    const double h_ar = h.width() / std::max(h.height(), eps);
    const double o_ar = o.width() / std::max(o.height(), eps);
    put(std::log(std::max(h_ar, eps) / std::max(o_ar, eps)));
    return f;
}

inline Tensor init_edge_encoding(const Tensor& spatial, const MlpSpec& edge_mlp) {
    Tensor x = spatial;
    x.shape = {1, spatial.size()};
    Tensor out = mlp_forward(edge_mlp, x);
    out.shape = {out.size()};
    return out;
}

// Raw per-joint pair feature: normalized joint position, unit direction to
// the object center, normalized distance, joint confidence.
inline Tensor joint_pair_feature(const Keypoint& kp, const Box& object_box,
                                 double image_w, double image_h) {
    Tensor f({kJointFeatureDim});
    const double dx = object_box.cx() - kp.x;
    const double dy = object_box.cy() - kp.y;
    const double dist = std::hypot(dx, dy);
    const double diag = std::sqrt(image_w * image_w + image_h * image_h);
    f.data[0] = static_cast<float>(kp.x / image_w);
    f.data[1] = static_cast<float>(kp.y / image_h);
    f.data[2] = dist > 0.0 ? static_cast<float>(dx / dist) : 0.0f;
    f.data[3] = dist > 0.0 ? static_cast<float>(dy / dist) : 0.0f;
    f.data[4] = static_cast<float>(dist / diag);
    f.data[5] = static_cast<float>(kp.confidence);
    return f;
}

// Joint attention over the 17 keypoints: softmax over (Q.K_k) * s, where s is
// the pose confidence. Written per the equation, without a sqrt(d) scale.
inline Tensor joint_attention(const Tensor& spatial, const JointSet& joints,
                              const Box& object_box, const MlpSpec& q_mlp,
                              const MlpSpec& k_mlp, double image_w,
                              double image_h) {
    Tensor q = spatial;
    q.shape = {1, spatial.size()};
    const Tensor qhat = mlp_forward(q_mlp, q);
    const double s = joints.score();
    Tensor logits({kNumJoints});
    for (int k = 0; k < kNumJoints; ++k) {
        Tensor jf = joint_pair_feature(joints.joints[k], object_box, image_w, image_h);
        jf.shape = {1, kJointFeatureDim};
        const Tensor khat = mlp_forward(k_mlp, jf);
        double dot = 0.0;
        for (std::size_t j = 0; j < khat.size(); ++j)
            dot += static_cast<double>(qhat.data[j]) * static_cast<double>(khat.data[j]);
        logits.data[k] = static_cast<float>(dot * s);
    }
    const Tensor zero_bias({kNumJoints});
    return masked_softmax(logits, zero_bias);
}

// Convex combination of the 17 joint-local vectors with weights alpha.
inline Tensor human_local_feature(const Tensor& alpha, const LocalFeatureSet& locals) {
    check(alpha.size() == kNumJoints && locals.features.size() == kNumJoints,
          "human_local_feature expects 17 weights and 17 locals");
    const std::size_t d = locals.features[0].size();
    Tensor out({d});
    for (std::size_t j = 0; j < d; ++j) {
        double acc = 0.0;
        for (int k = 0; k < kNumJoints; ++k)
            acc += static_cast<double>(alpha.data[k]) *
                   static_cast<double>(locals.features[k].data[j]);
        out.data[j] = static_cast<float>(acc);
    }
    return out;
}

inline Tensor mbf_fuse(const Tensor& appearance, const Tensor& edge,
                       const MbfParams& p) {
    check(p.branches() > 0, "mbf_fuse: no branches");
    const std::size_t sub = p.app_w[0].shape[1];
    Tensor cat({1, p.branches() * sub});
    Tensor a = appearance;
    a.shape = {1, appearance.size()};
    Tensor e = edge;
    e.shape = {1, edge.size()};
    for (std::size_t b = 0; b < p.branches(); ++b) {
        Tensor pa = matmul(a, p.app_w[b]);
        Tensor pe = matmul(e, p.edge_w[b]);
        for (std::size_t j = 0; j < sub; ++j) {
            const double v = (pa.data[j] + p.app_b[b].data[j]) *
                             (pe.data[j] + p.edge_b[b].data[j]);
            cat.data[b * sub + j] = static_cast<float>(gelu(v));
        }
    }
    Tensor out = matmul(cat, p.out_w);
    for (std::size_t j = 0; j < out.size(); ++j) out.data[j] += p.out_b.data[j];
    out.shape = {out.size()};
    return out;
}

namespace detail {
inline Tensor concat(const Tensor& a, const Tensor& b) {
    Tensor out({a.size() + b.size()});
    std::copy(a.data.begin(), a.data.end(), out.data.begin());
    std::copy(b.data.begin(), b.data.end(), out.data.begin() + a.size());
    return out;
}

inline Tensor row_of_matrix(const Tensor& x, std::size_t r) {
    Tensor out({x.shape[1]});
    for (std::size_t j = 0; j < x.shape[1]; ++j) out.data[j] = x.at(r, j);
    return out;
}
}  // namespace detail

// One synchronous round of bidirectional message passing with the human
// self-loop: object-to-human messages carry the pair's human local feature,
// node updates are residual + layer norm over the mean incoming message.
// Nodes with no pairs are unchanged.
inline GraphState message_passing_step(const GraphState& state,
                                       const GraphParams& gp) {
    GraphState next = state;
    const std::size_t nh = state.human_enc.size();
    const std::size_t no = state.object_enc.size();
    std::vector<Tensor> h_sum(nh), o_sum(no);
    std::vector<int> h_cnt(nh, 0), o_cnt(no, 0);
    for (std::size_t e = 0; e < state.pairs.size(); ++e) {
        const auto [hi, oj] = state.pairs[e];
        const Tensor m_oh = mbf_fuse(
            detail::concat(state.pair_local[e], state.object_enc[oj]),
            state.edge_enc[e], gp.mbf_obj_to_human);
        const Tensor m_ho =
            mbf_fuse(state.human_enc[hi], state.edge_enc[e], gp.mbf_human_to_obj);
        if (h_cnt[hi] == 0) h_sum[hi] = Tensor({m_oh.size()});
        if (o_cnt[oj] == 0) o_sum[oj] = Tensor({m_ho.size()});
        for (std::size_t j = 0; j < m_oh.size(); ++j) h_sum[hi].data[j] += m_oh.data[j];
        for (std::size_t j = 0; j < m_ho.size(); ++j) o_sum[oj].data[j] += m_ho.data[j];
        ++h_cnt[hi];
        ++o_cnt[oj];
    }
    auto update = [&](const Tensor& enc, const Tensor& sum, int cnt) {
        Tensor r({enc.size()});
        for (std::size_t j = 0; j < enc.size(); ++j)
            r.data[j] = enc.data[j] + sum.data[j] / static_cast<float>(cnt);
        return layer_norm(r, gp.node_ln_gain, gp.node_ln_shift);
    };
    for (std::size_t i = 0; i < nh; ++i)
        if (h_cnt[i] > 0) next.human_enc[i] = update(state.human_enc[i], h_sum[i], h_cnt[i]);
    for (std::size_t j = 0; j < no; ++j)
        if (o_cnt[j] > 0) next.object_enc[j] = update(state.object_enc[j], o_sum[j], o_cnt[j]);
    next.step = state.step + 1;
    return next;
}

// Builds node/edge encodings, joint attention and per-pair local features
// once, then runs the configured number of message-passing steps. Human nodes
// are the person-class detections; every detection is an object node; pairs
// cover every (human, other detection) combination.
inline GraphState run_graph(const Tensor& cls_per_region,
                            const std::vector<Detection>& dets,
                            const std::vector<std::optional<JointSet>>& poses,
                            const std::vector<std::optional<LocalFeatureSet>>& locals,
                            double image_w, double image_h,
                            const GraphParams& gp) {
    check(cls_per_region.rank() == 2 && cls_per_region.shape[0] == dets.size(),
          "run_graph region/detection count mismatch");
    check(poses.size() == dets.size() && locals.size() == dets.size(),
          "run_graph pose/local count mismatch");
    GraphState st;
    for (std::size_t i = 0; i < dets.size(); ++i) {
        const Tensor enc =
            init_node_encoding(detail::row_of_matrix(cls_per_region, i), gp.node_encoder);
        st.object_enc.push_back(enc);
        if (dets[i].class_id == kPersonClass) {
            check(poses[i].has_value() && locals[i].has_value(),
                  "run_graph: person detection without pose");
            st.human_det.push_back(i);
            st.human_enc.push_back(enc);
        }
    }
    for (std::size_t h = 0; h < st.human_det.size(); ++h) {
        const std::size_t i = st.human_det[h];
        for (std::size_t j = 0; j < dets.size(); ++j) {
            if (j == i) continue;
            st.pairs.emplace_back(h, j);
            const Tensor sp =
                spatial_pair_features(dets[i].box, dets[j].box, image_w, image_h);
            st.edge_enc.push_back(init_edge_encoding(sp, gp.edge_encoder));
            const Tensor alpha = joint_attention(sp, *poses[i], dets[j].box,
                                                 gp.joint_q, gp.joint_k, image_w,
                                                 image_h);
            st.pair_local.push_back(human_local_feature(alpha, *locals[i]));
            st.joint_alpha.push_back(alpha);
        }
    }
    for (int t = 0; t < gp.steps; ++t) st = message_passing_step(st, gp);
    return st;
}

}  // namespace viplo
