#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "viplo/backbone.hpp"
#include "viplo/pose_graph.hpp"

namespace viplo {

constexpr int kMbfBranches = 4;

struct ModelConfig {
    std::uint32_t patch_size = 32;
    std::uint32_t image_size = 672;
    std::uint32_t embed_dim = 768;
    std::uint32_t num_heads = 12;
    std::uint32_t num_layers = 12;
    std::uint32_t mlp_hidden = 3072;
    std::uint32_t node_dim = 256;
    std::uint32_t edge_dim = 256;
    std::uint32_t verb_classes = 117;
    std::uint32_t steps = 2;

    ViTConfig vit() const {
        return ViTConfig{static_cast<int>(patch_size),  static_cast<int>(image_size),
                         static_cast<int>(embed_dim),   static_cast<int>(num_heads),
                         static_cast<int>(num_layers),  static_cast<int>(mlp_hidden)};
    }

    void validate() const {
        vit().validate();
        check(node_dim % kMbfBranches == 0,
              "node_dim must be divisible by the MBF branch count");
        check(verb_classes >= 1 && steps >= 0, "bad verb/steps config");
    }
};

struct ModelParams {
    ModelConfig cfg;
    ViTParams vit;
    GraphParams graph;
};

namespace detail {

inline MlpSpec make_mlp(const std::vector<std::size_t>& widths) {
    MlpSpec s;
    for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
        s.weights.push_back(Tensor({widths[i], widths[i + 1]}));
        s.biases.push_back(Tensor({widths[i + 1]}));
    }
    return s;
}

inline MbfParams make_mbf(std::size_t d_app, std::size_t d_edge, std::size_t d_out) {
    MbfParams p;
    const std::size_t sub = d_out / kMbfBranches;
    for (int b = 0; b < kMbfBranches; ++b) {
        p.app_w.push_back(Tensor({d_app, sub}));
        p.app_b.push_back(Tensor({sub}));
        p.edge_w.push_back(Tensor({d_edge, sub}));
        p.edge_b.push_back(Tensor({sub}));
    }
    p.out_w = Tensor({kMbfBranches * sub, d_out});
    p.out_b = Tensor({d_out});
    return p;
}

}  // namespace detail

// Zero-initialized parameter set with the shapes implied by the config.
inline ModelParams allocate_model(const ModelConfig& cfg) {
    cfg.validate();
    ModelParams m;
    m.cfg = cfg;
    m.vit.cfg = cfg.vit();
    const std::size_t c = cfg.embed_dim;
    const std::size_t p = cfg.patch_size;
    m.vit.patch_weight = Tensor({3 * p * p, c});
    m.vit.patch_bias = Tensor({c});
    m.vit.cls_token = Tensor({c});
    m.vit.pos_embed = Tensor({static_cast<std::size_t>(m.vit.cfg.seq_len()), c});
    for (std::uint32_t l = 0; l < cfg.num_layers; ++l) {
        EncoderLayerParams lp;
        lp.ln1_gain = Tensor({c});
        lp.ln1_shift = Tensor({c});
        lp.attn = AttentionParams{Tensor({c, c}), Tensor({c}), Tensor({c, c}),
                                  Tensor({c}),    Tensor({c, c}), Tensor({c}),
                                  Tensor({c, c}), Tensor({c})};
        lp.ln2_gain = Tensor({c});
        lp.ln2_shift = Tensor({c});
        lp.mlp = detail::make_mlp({c, cfg.mlp_hidden, c});
        m.vit.layers.push_back(std::move(lp));
    }
    const std::size_t cn = cfg.node_dim, ce = cfg.edge_dim;
    m.graph.node_encoder = detail::make_mlp({c, cn, cn});
    m.graph.edge_encoder = detail::make_mlp({kSpatialFeatureDim, ce, ce, ce});
    m.graph.joint_q = detail::make_mlp({kSpatialFeatureDim, ce, ce});
    m.graph.joint_k = detail::make_mlp({kJointFeatureDim, ce, ce});
    m.graph.local_projector = detail::make_mlp({c, cn});
    m.graph.mbf_obj_to_human = detail::make_mbf(2 * cn, ce, cn);
    m.graph.mbf_human_to_obj = detail::make_mbf(cn, ce, cn);
    m.graph.mbf_classifier = detail::make_mbf(2 * cn, ce, cn);
    m.graph.node_ln_gain = Tensor({cn});
    m.graph.node_ln_shift = Tensor({cn});
    m.graph.verb_w = Tensor({cn, cfg.verb_classes});
    m.graph.verb_b = Tensor({cfg.verb_classes});
    m.graph.steps = static_cast<int>(cfg.steps);
    return m;
}

// Calls f(name, tensor) for every named parameter, in a fixed order.
template <typename F>
void visit_params(ModelParams& m, F&& f) {
    f("vit.patch_proj.weight", m.vit.patch_weight);
    f("vit.patch_proj.bias", m.vit.patch_bias);
    f("vit.cls_token", m.vit.cls_token);
    f("vit.pos_embed", m.vit.pos_embed);
    for (std::size_t l = 0; l < m.vit.layers.size(); ++l) {
        const std::string pre = "vit.layer" + std::to_string(l) + ".";
        EncoderLayerParams& lp = m.vit.layers[l];
        f(pre + "ln1.gain", lp.ln1_gain);
        f(pre + "ln1.shift", lp.ln1_shift);
        f(pre + "attn.q.weight", lp.attn.wq);
        f(pre + "attn.q.bias", lp.attn.bq);
        f(pre + "attn.k.weight", lp.attn.wk);
        f(pre + "attn.k.bias", lp.attn.bk);
        f(pre + "attn.v.weight", lp.attn.wv);
        f(pre + "attn.v.bias", lp.attn.bv);
        f(pre + "attn.out.weight", lp.attn.wo);
        f(pre + "attn.out.bias", lp.attn.bo);
        f(pre + "ln2.gain", lp.ln2_gain);
        f(pre + "ln2.shift", lp.ln2_shift);
        f(pre + "mlp.0.weight", lp.mlp.weights[0]);
        f(pre + "mlp.0.bias", lp.mlp.biases[0]);
        f(pre + "mlp.1.weight", lp.mlp.weights[1]);
        f(pre + "mlp.1.bias", lp.mlp.biases[1]);
    }
    auto visit_mlp = [&](const std::string& pre, MlpSpec& s) {
        for (std::size_t i = 0; i < s.weights.size(); ++i) {
            f(pre + "." + std::to_string(i) + ".weight", s.weights[i]);
            f(pre + "." + std::to_string(i) + ".bias", s.biases[i]);
        }
    };
    visit_mlp("graph.node_encoder", m.graph.node_encoder);
    visit_mlp("graph.edge_encoder", m.graph.edge_encoder);
    visit_mlp("graph.joint_q", m.graph.joint_q);
    visit_mlp("graph.joint_k", m.graph.joint_k);
    visit_mlp("graph.local_projector", m.graph.local_projector);
    auto visit_mbf = [&](const std::string& pre, MbfParams& p) {
        for (std::size_t b = 0; b < p.branches(); ++b) {
            const std::string bp = pre + ".branch" + std::to_string(b) + ".";
            f(bp + "app.weight", p.app_w[b]);
            f(bp + "app.bias", p.app_b[b]);
            f(bp + "edge.weight", p.edge_w[b]);
            f(bp + "edge.bias", p.edge_b[b]);
        }
        f(pre + ".out.weight", p.out_w);
        f(pre + ".out.bias", p.out_b);
    };
    visit_mbf("graph.mbf_oh", m.graph.mbf_obj_to_human);
    visit_mbf("graph.mbf_ho", m.graph.mbf_human_to_obj);
    visit_mbf("graph.mbf_cls", m.graph.mbf_classifier);
    f("graph.node_ln.gain", m.graph.node_ln_gain);
    f("graph.node_ln.shift", m.graph.node_ln_shift);
    f("graph.verb_head.weight", m.graph.verb_w);
    f("graph.verb_head.bias", m.graph.verb_b);
}

inline bool ends_with(const std::string& s, const std::string& suf) {
    return s.size() >= suf.size() && s.compare(s.size() - suf.size(), suf.size(), suf) == 0;
}

// Seeded random initialization: weights and embeddings N(0, 0.02), biases and
// layer-norm shifts zero, layer-norm gains one.
inline ModelParams seeded_model(const ModelConfig& cfg, std::uint64_t seed) {
    ModelParams m = allocate_model(cfg);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> dist(0.0, 0.02);
    visit_params(m, [&](const std::string& name, Tensor& t) {
        if (ends_with(name, ".gain")) {
            std::fill(t.data.begin(), t.data.end(), 1.0f);
        } else if (ends_with(name, ".bias") || ends_with(name, ".shift")) {
            std::fill(t.data.begin(), t.data.end(), 0.0f);
        } else {
            for (float& v : t.data) v = static_cast<float>(dist(rng));
        }
    });
    return m;
}

}  // namespace viplo
