#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace viplo {

class DimensionError : public std::runtime_error {
public:
    explicit DimensionError(const std::string& msg) : std::runtime_error(msg) {}
};

class DegenerateInputError : public std::runtime_error {
public:
    explicit DegenerateInputError(const std::string& msg) : std::runtime_error(msg) {}
};

// Row-major dense float32 tensor. Reductions accumulate in double.
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<float> data;

    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> s)
        : shape(std::move(s)),
          data(std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                               std::multiplies<>()),
               0.0f) {}

    static Tensor zeros(std::vector<std::size_t> s) { return Tensor(std::move(s)); }

    std::size_t size() const { return data.size(); }
    std::size_t rank() const { return shape.size(); }
    std::size_t dim(std::size_t i) const { return shape.at(i); }

    float& at(std::size_t i) { return data[i]; }
    float at(std::size_t i) const { return data[i]; }
    float& at(std::size_t i, std::size_t j) { return data[i * shape[1] + j]; }
    float at(std::size_t i, std::size_t j) const { return data[i * shape[1] + j]; }
    float& at(std::size_t i, std::size_t j, std::size_t k) {
        return data[(i * shape[1] + j) * shape[2] + k];
    }
    float at(std::size_t i, std::size_t j, std::size_t k) const {
        return data[(i * shape[1] + j) * shape[2] + k];
    }

    // Last dimension extent; the row count is size()/last_dim().
    std::size_t last_dim() const {
        if (shape.empty()) throw DimensionError("tensor has no dimensions");
        return shape.back();
    }
};

inline void check(bool cond, const std::string& msg) {
    if (!cond) throw DimensionError(msg);
}

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    check(a.rank() == 2 && b.rank() == 2, "matmul expects rank-2 tensors");
    check(a.shape[1] == b.shape[0], "matmul inner dimensions differ");
    const std::size_t m = a.shape[0], k = a.shape[1], n = b.shape[1];
    Tensor out({m, n});
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (std::size_t t = 0; t < k; ++t)
                acc += static_cast<double>(a.at(i, t)) * static_cast<double>(b.at(t, j));
            out.at(i, j) = static_cast<float>(acc);
        }
    }
    return out;
}

// Softmax over the last dimension with an additive bias. Bias entries may be
// -inf; those positions come out exactly 0. A row with no finite entry after
// adding the bias is an error, never a silent NaN.
inline Tensor masked_softmax(const Tensor& logits, const Tensor& bias) {
    check(logits.shape == bias.shape, "masked_softmax shape mismatch");
    const std::size_t n = logits.last_dim();
    const std::size_t rows = logits.size() / n;
    Tensor out(logits.shape);
    std::vector<double> combined(n);
    for (std::size_t r = 0; r < rows; ++r) {
        const std::size_t base = r * n;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < n; ++j) {
            combined[j] = static_cast<double>(logits.data[base + j]) +
                          static_cast<double>(bias.data[base + j]);
            if (std::isfinite(combined[j]) && combined[j] > mx) mx = combined[j];
        }
        if (!std::isfinite(mx))
            throw DegenerateInputError("masked_softmax: fully masked row");
        double sum = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            if (std::isfinite(combined[j])) {
                combined[j] = std::exp(combined[j] - mx);
                sum += combined[j];
            } else {
                combined[j] = 0.0;
            }
        }
        for (std::size_t j = 0; j < n; ++j)
            out.data[base + j] = static_cast<float>(combined[j] / sum);
    }
    return out;
}

inline Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& shift,
                         float eps = 1e-5f) {
    const std::size_t d = x.last_dim();
    check(gain.size() == d && shift.size() == d, "layer_norm parameter width mismatch");
    const std::size_t rows = x.size() / d;
    Tensor out(x.shape);
    for (std::size_t r = 0; r < rows; ++r) {
        const std::size_t base = r * d;
        double mean = 0.0;
        for (std::size_t j = 0; j < d; ++j) mean += x.data[base + j];
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double c = x.data[base + j] - mean;
            var += c * c;
        }
        var /= static_cast<double>(d);
        const double inv = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < d; ++j)
            out.data[base + j] = static_cast<float>(
                gain.data[j] * (x.data[base + j] - mean) * inv + shift.data[j]);
    }
    return out;
}

inline double gelu(double v) { return 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0))); }

inline Tensor gelu(const Tensor& x) {
    Tensor out(x.shape);
    for (std::size_t i = 0; i < x.size(); ++i)
        out.data[i] = static_cast<float>(gelu(static_cast<double>(x.data[i])));
    return out;
}

inline double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

// map is [H, W, C]; (x, y) in continuous map coordinates with the value of
// cell (i, j) located at (x=j, y=i). Out-of-range points clamp to the border.
inline Tensor bilinear_sample(const Tensor& map, double x, double y) {
    check(map.rank() == 3, "bilinear_sample expects [H,W,C]");
    const std::size_t h = map.shape[0], w = map.shape[1], c = map.shape[2];
    x = std::clamp(x, 0.0, static_cast<double>(w - 1));
    y = std::clamp(y, 0.0, static_cast<double>(h - 1));
    const std::size_t x0 = static_cast<std::size_t>(std::floor(x));
    const std::size_t y0 = static_cast<std::size_t>(std::floor(y));
    const std::size_t x1 = std::min(x0 + 1, w - 1);
    const std::size_t y1 = std::min(y0 + 1, h - 1);
    const double fx = x - static_cast<double>(x0);
    const double fy = y - static_cast<double>(y0);
    Tensor out({c});
    for (std::size_t k = 0; k < c; ++k) {
        const double v =
            (1.0 - fy) * ((1.0 - fx) * map.at(y0, x0, k) + fx * map.at(y0, x1, k)) +
            fy * ((1.0 - fx) * map.at(y1, x0, k) + fx * map.at(y1, x1, k));
        out.data[k] = static_cast<float>(v);
    }
    return out;
}

// Stack of affine layers with GELU between hidden layers and identity on the
// output layer. weights[i] is [in, out].
struct MlpSpec {
    std::vector<Tensor> weights;
    std::vector<Tensor> biases;

    std::size_t input_width() const { return weights.front().shape[0]; }
    std::size_t output_width() const { return weights.back().shape[1]; }
};

inline Tensor mlp_forward(const MlpSpec& spec, const Tensor& x) {
    check(!spec.weights.empty() && spec.weights.size() == spec.biases.size(),
          "mlp_forward: malformed spec");
    const std::size_t d_in = x.last_dim();
    check(d_in == spec.input_width(), "mlp_forward input width mismatch");
    const std::size_t rows = x.size() / d_in;
    Tensor cur = x;
    cur.shape = {rows, d_in};
    for (std::size_t l = 0; l < spec.weights.size(); ++l) {
        check(cur.shape[1] == spec.weights[l].shape[0],
              "mlp_forward layer width mismatch");
        Tensor next = matmul(cur, spec.weights[l]);
        const std::size_t w = next.shape[1];
        check(spec.biases[l].size() == w, "mlp_forward bias width mismatch");
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < w; ++j) next.at(r, j) += spec.biases[l].at(j);
        if (l + 1 < spec.weights.size()) next = gelu(next);
        cur = std::move(next);
    }
    std::vector<std::size_t> out_shape = x.shape;
    out_shape.back() = cur.shape[1];
    cur.shape = std::move(out_shape);
    return cur;
}

}  // namespace viplo
