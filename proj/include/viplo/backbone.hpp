#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "viplo/geometry.hpp"
#include "viplo/tensor.hpp"
#include "viplo/threading.hpp"

namespace viplo {

struct ViTConfig {
    int patch_size = 32;
    int image_size = 672;
    int embed_dim = 768;
    int num_heads = 12;
    int num_layers = 12;
    int mlp_hidden = 3072;

    int grid_width() const { return image_size / patch_size; }
    int patch_count() const { return grid_width() * grid_width(); }
    int seq_len() const { return patch_count() + 1; }
    PatchGrid grid() const { return PatchGrid{patch_size, grid_width(), grid_width()}; }

    void validate() const {
        check(patch_size > 0 && image_size % patch_size == 0,
              "image_size must be divisible by patch_size");
        check(num_heads > 0 && embed_dim % num_heads == 0,
              "embed_dim must be divisible by num_heads");
        check(num_layers >= 2, "need at least two encoder layers");
    }
};

struct AttentionParams {
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;  // all projections [C, C], biases [C]
};

struct EncoderLayerParams {
    Tensor ln1_gain, ln1_shift;
    AttentionParams attn;
    Tensor ln2_gain, ln2_shift;
    MlpSpec mlp;  // C -> hidden -> C, GELU in between
};

struct ViTParams {
    ViTConfig cfg;
    Tensor patch_weight;  // [3*p*p, C], patch pixels flattened (y, x, channel)
    Tensor patch_bias;    // [C]
    Tensor cls_token;     // [C]
    Tensor pos_embed;     // [(L+1), C]
    std::vector<EncoderLayerParams> layers;
};

struct BackboneOutput {
    Tensor cls_per_region;              // [M, C]
    Tensor patch_map;                   // [H, W, C]
    Tensor penultimate_cls;             // [C]
    std::vector<std::size_t> degenerate_regions;
};

// CLS-row attention bias from a region mask: log(S), with S=0 mapped to -inf.
inline Tensor attention_bias_from_mask(const RegionMask& mask) {
    Tensor bias({mask.size()});
    for (std::size_t i = 0; i < mask.size(); ++i)
        bias.data[i] = mask.values[i] > 0.0
                           ? static_cast<float>(std::log(mask.values[i]))
                           : -std::numeric_limits<float>::infinity();
    return bias;
}

namespace detail {

struct QKV {
    Tensor q, k, v;  // each [T, C]
};

inline Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b) {
    Tensor out = matmul(x, w);
    const std::size_t rows = out.shape[0], cols = out.shape[1];
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < cols; ++j) out.at(r, j) += b.at(j);
    return out;
}

inline QKV compute_qkv(const Tensor& x_normed, const AttentionParams& p) {
    return QKV{affine(x_normed, p.wq, p.bq), affine(x_normed, p.wk, p.bk),
               affine(x_normed, p.wv, p.bv)};
}

// Attention output (pre output-projection) for one query row. The bias row,
// when given, is added to every head's logits identically.
inline Tensor attend_row(const QKV& qkv, std::size_t row, int heads,
                         const float* bias_row) {
    const std::size_t t = qkv.q.shape[0];
    const std::size_t c = qkv.q.shape[1];
    const std::size_t dh = c / static_cast<std::size_t>(heads);
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    Tensor out({c});
    Tensor logits({t}), bias({t});
    for (int h = 0; h < heads; ++h) {
        const std::size_t off = static_cast<std::size_t>(h) * dh;
        for (std::size_t u = 0; u < t; ++u) {
            double dot = 0.0;
            for (std::size_t j = 0; j < dh; ++j)
                dot += static_cast<double>(qkv.q.at(row, off + j)) *
                       static_cast<double>(qkv.k.at(u, off + j));
            logits.data[u] = static_cast<float>(dot * scale);
            bias.data[u] = bias_row ? bias_row[u] : 0.0f;
        }
        const Tensor attn = masked_softmax(logits, bias);
        for (std::size_t j = 0; j < dh; ++j) {
            double acc = 0.0;
            for (std::size_t u = 0; u < t; ++u)
                acc += static_cast<double>(attn.data[u]) *
                       static_cast<double>(qkv.v.at(u, off + j));
            out.data[off + j] = static_cast<float>(acc);
        }
    }
    return out;
}

inline Tensor row_of(const Tensor& x, std::size_t r) {
    Tensor out({x.shape[1]});
    for (std::size_t j = 0; j < x.shape[1]; ++j) out.data[j] = x.at(r, j);
    return out;
}

// residual + MLP sublayer applied to a single token vector
inline Tensor finish_token(const Tensor& x_token, const Tensor& attn_out,
                           const EncoderLayerParams& p) {
    const std::size_t c = x_token.size();
    Tensor v({1, c});
    for (std::size_t j = 0; j < c; ++j) v.data[j] = attn_out.data[j];
    Tensor proj = affine(v, p.attn.wo, p.attn.bo);
    Tensor y({c});
    for (std::size_t j = 0; j < c; ++j) y.data[j] = x_token.data[j] + proj.data[j];
    Tensor yn = layer_norm(y, p.ln2_gain, p.ln2_shift);
    yn.shape = {1, c};
    Tensor m = mlp_forward(p.mlp, yn);
    for (std::size_t j = 0; j < c; ++j) y.data[j] += m.data[j];
    return y;
}

}  // namespace detail

// Pre-norm transformer block: x + MHSA(LN(x), bias), then + MLP(LN(.)).
// bias, when given, is a full [T, T] logit bias shared across heads.
inline Tensor encoder_layer(const Tensor& x, const EncoderLayerParams& p, int heads,
                            const Tensor* bias = nullptr) {
    check(x.rank() == 2, "encoder_layer expects [T, C]");
    const std::size_t t = x.shape[0], c = x.shape[1];
    if (bias) check(bias->shape == std::vector<std::size_t>({t, t}),
                    "encoder_layer bias shape mismatch");
    const Tensor h = layer_norm(x, p.ln1_gain, p.ln1_shift);
    const detail::QKV qkv = detail::compute_qkv(h, p.attn);
    Tensor attn({t, c});
    for (std::size_t r = 0; r < t; ++r) {
        const float* brow = bias ? &bias->data[r * t] : nullptr;
        const Tensor a = detail::attend_row(qkv, r, heads, brow);
        for (std::size_t j = 0; j < c; ++j) attn.at(r, j) = a.data[j];
    }
    Tensor y = detail::affine(attn, p.attn.wo, p.attn.bo);
    for (std::size_t i = 0; i < y.size(); ++i) y.data[i] += x.data[i];
    Tensor yn = layer_norm(y, p.ln2_gain, p.ln2_shift);
    Tensor m = mlp_forward(p.mlp, yn);
    for (std::size_t i = 0; i < y.size(); ++i) y.data[i] += m.data[i];
    return y;
}

// Drops the CLS row and reshapes patch tokens into the spatial grid.
inline Tensor unflatten(const Tensor& tokens, const PatchGrid& grid) {
    check(tokens.rank() == 2, "unflatten expects [(L+1), C]");
    const std::size_t l = static_cast<std::size_t>(grid.patch_count());
    check(tokens.shape[0] == l + 1, "unflatten token count mismatch");
    const std::size_t c = tokens.shape[1];
    Tensor out({static_cast<std::size_t>(grid.height),
                static_cast<std::size_t>(grid.width), c});
    for (std::size_t i = 0; i < l * c; ++i) out.data[i] = tokens.data[c + i];
    return out;
}

// Linear patch projection with CLS prepended and position embeddings added.
inline Tensor patch_embed(const Tensor& image, const ViTParams& params) {
    const ViTConfig& cfg = params.cfg;
    const std::size_t s = static_cast<std::size_t>(cfg.image_size);
    check(image.rank() == 3 && image.shape[0] == s && image.shape[1] == s &&
              image.shape[2] == 3,
          "patch_embed image size mismatch");
    const int p = cfg.patch_size;
    const int gw = cfg.grid_width();
    const std::size_t c = static_cast<std::size_t>(cfg.embed_dim);
    const std::size_t flat = static_cast<std::size_t>(3 * p * p);
    check(params.patch_weight.shape == std::vector<std::size_t>({flat, c}),
          "patch_embed weight shape mismatch");
    check(params.pos_embed.shape ==
              std::vector<std::size_t>({static_cast<std::size_t>(cfg.seq_len()), c}),
          "patch_embed position embedding shape mismatch");
    Tensor tokens({static_cast<std::size_t>(cfg.seq_len()), c});
    for (std::size_t j = 0; j < c; ++j)
        tokens.at(0, j) = params.cls_token.at(j) + params.pos_embed.at(0, j);
    Tensor patch({1, flat});
    for (int gy = 0; gy < gw; ++gy) {
        for (int gx = 0; gx < gw; ++gx) {
            std::size_t w = 0;
            for (int py = 0; py < p; ++py)
                for (int px = 0; px < p; ++px)
                    for (int ch = 0; ch < 3; ++ch)
                        patch.data[w++] = image.at(
                            static_cast<std::size_t>(gy * p + py),
                            static_cast<std::size_t>(gx * p + px),
                            static_cast<std::size_t>(ch));
            const Tensor proj = detail::affine(patch, params.patch_weight,
                                               params.patch_bias);
            const std::size_t row = 1 + static_cast<std::size_t>(gy) * gw + gx;
            for (std::size_t j = 0; j < c; ++j)
                tokens.at(row, j) = proj.data[j] + params.pos_embed.at(row, j);
        }
    }
    return tokens;
}

// 2D bilinear resize of the patch position embeddings; the CLS row is copied.
inline Tensor interpolate_pos_embed(const Tensor& pos, int from_w, int to_w) {
    check(pos.rank() == 2, "interpolate_pos_embed expects [(L+1), C]");
    check(pos.shape[0] == static_cast<std::size_t>(from_w * from_w) + 1,
          "interpolate_pos_embed: source grid is not square");
    const std::size_t c = pos.shape[1];
    Tensor grid_map({static_cast<std::size_t>(from_w), static_cast<std::size_t>(from_w),
                     c});
    for (std::size_t i = 0; i < grid_map.size(); ++i) grid_map.data[i] = pos.data[c + i];
    Tensor out({static_cast<std::size_t>(to_w * to_w) + 1, c});
    for (std::size_t j = 0; j < c; ++j) out.at(0, j) = pos.at(0, j);
    const double step = to_w > 1
                            ? static_cast<double>(from_w - 1) / (to_w - 1)
                            : 0.0;
    for (int y = 0; y < to_w; ++y) {
        for (int x = 0; x < to_w; ++x) {
            const Tensor v = bilinear_sample(grid_map, x * step, y * step);
            const std::size_t row = 1 + static_cast<std::size_t>(y) * to_w + x;
            for (std::size_t j = 0; j < c; ++j) out.at(row, j) = v.data[j];
        }
    }
    return out;
}

// Final encoder layer with MOA. Q/K/V are computed once from the penultimate
// sequence; the full unmasked layer yields the patch map; per region only the
// CLS attention row is recomputed with the log-area bias. Regions whose mask
// has no nonzero patch entry are reported in degenerate_regions and get a
// zero feature.
inline BackboneOutput moa_final_layer(const Tensor& penultimate,
                                      const std::vector<RegionMask>& masks,
                                      const EncoderLayerParams& p,
                                      const PatchGrid& grid, int heads,
                                      int threads = 1) {
    check(penultimate.rank() == 2, "moa_final_layer expects [(L+1), C]");
    const std::size_t t = penultimate.shape[0], c = penultimate.shape[1];
    check(t == static_cast<std::size_t>(grid.patch_count()) + 1,
          "moa_final_layer sequence/grid mismatch");
    for (const auto& m : masks)
        check(m.size() == t, "moa_final_layer mask length mismatch");

    const Tensor h = layer_norm(penultimate, p.ln1_gain, p.ln1_shift);
    const detail::QKV qkv = detail::compute_qkv(h, p.attn);

    // Shared unmasked pass over all tokens.
    Tensor attn({t, c});
    parallel_for(t, threads, [&](std::size_t r) {
        const Tensor a = detail::attend_row(qkv, r, heads, nullptr);
        for (std::size_t j = 0; j < c; ++j) attn.at(r, j) = a.data[j];
    });
    Tensor y = detail::affine(attn, p.attn.wo, p.attn.bo);
    for (std::size_t i = 0; i < y.size(); ++i) y.data[i] += penultimate.data[i];
    Tensor yn = layer_norm(y, p.ln2_gain, p.ln2_shift);
    Tensor m = mlp_forward(p.mlp, yn);
    for (std::size_t i = 0; i < y.size(); ++i) y.data[i] += m.data[i];

    BackboneOutput out;
    out.patch_map = unflatten(y, grid);
    out.penultimate_cls = detail::row_of(penultimate, 0);
    out.cls_per_region = Tensor({masks.size(), c});

    const Tensor x_cls = detail::row_of(penultimate, 0);
    std::vector<char> degenerate(masks.size(), 0);
    parallel_for(masks.size(), threads, [&](std::size_t r) {
        if (masks[r].all_patches_zero()) {
            degenerate[r] = 1;
            return;
        }
        const Tensor bias = attention_bias_from_mask(masks[r]);
        const Tensor a = detail::attend_row(qkv, 0, heads, bias.data.data());
        const Tensor f = detail::finish_token(x_cls, a, p);
        for (std::size_t j = 0; j < c; ++j) out.cls_per_region.at(r, j) = f.data[j];
    });
    for (std::size_t r = 0; r < masks.size(); ++r)
        if (degenerate[r]) out.degenerate_regions.push_back(r);
    return out;
}

// Reference for moa_final_layer's region features: rerun the entire final
// layer per region with the full (L+1)x(L+1) bias (first row log S, zeros
// elsewhere) and take the CLS output.
inline Tensor moa_region_feature_reference(const Tensor& penultimate,
                                           const RegionMask& mask,
                                           const EncoderLayerParams& p, int heads) {
    const std::size_t t = penultimate.shape[0];
    Tensor bias({t, t});
    const Tensor row = attention_bias_from_mask(mask);
    for (std::size_t j = 0; j < t; ++j) bias.at(0, j) = row.data[j];
    const Tensor y = encoder_layer(penultimate, p, heads, &bias);
    return detail::row_of(y, 0);
}

// Patch embedding plus all but the final encoder layer.
inline Tensor run_trunk(const Tensor& image, const ViTParams& params) {
    Tensor x = patch_embed(image, params);
    for (std::size_t l = 0; l + 1 < params.layers.size(); ++l)
        x = encoder_layer(x, params.layers[l], params.cfg.num_heads);
    return x;
}

}  // namespace viplo
