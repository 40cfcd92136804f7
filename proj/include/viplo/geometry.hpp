#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include "viplo/tensor.hpp"

namespace viplo {

constexpr int kNumJoints = 17;

struct Box {
    double x1 = 0.0, y1 = 0.0, x2 = 0.0, y2 = 0.0;

    double width() const { return x2 - x1; }
    double height() const { return y2 - y1; }
    double area() const { return std::max(0.0, width()) * std::max(0.0, height()); }
    double cx() const { return 0.5 * (x1 + x2); }
    double cy() const { return 0.5 * (y1 + y2); }
};

inline Box clip_box(const Box& b, double image_w, double image_h) {
    Box r;
    r.x1 = std::clamp(b.x1, 0.0, image_w);
    r.y1 = std::clamp(b.y1, 0.0, image_h);
    r.x2 = std::clamp(b.x2, 0.0, image_w);
    r.y2 = std::clamp(b.y2, 0.0, image_h);
    if (r.x2 < r.x1) r.x2 = r.x1;
    if (r.y2 < r.y1) r.y2 = r.y1;
    return r;
}

struct PatchGrid {
    int patch_size = 0;   // pixels
    int width = 0;        // patches
    int height = 0;       // patches

    int patch_count() const { return width * height; }
    double image_width() const { return static_cast<double>(width * patch_size); }
    double image_height() const { return static_cast<double>(height * patch_size); }
};

// Per-region attention mask S: index 0 is the CLS slot (always 1), indices
// 1..L are patches in row-major grid order; each patch entry is the fraction
// of the patch covered by the region box.
struct RegionMask {
    std::vector<double> values;

    std::size_t size() const { return values.size(); }
    bool all_patches_zero() const {
        for (std::size_t i = 1; i < values.size(); ++i)
            if (values[i] != 0.0) return false;
        return true;
    }
};

struct Keypoint {
    double x = 0.0, y = 0.0, confidence = 0.0;
};

struct JointSet {
    std::array<Keypoint, kNumJoints> joints{};

    // Pose confidence: mean of the 17 keypoint confidences.
    double score() const {
        double s = 0.0;
        for (const auto& j : joints) s += j.confidence;
        return s / static_cast<double>(kNumJoints);
    }
};

namespace detail {
inline Box clipped_positive_box(const Box& box, const PatchGrid& grid,
                                const char* who) {
    Box b = clip_box(box, grid.image_width(), grid.image_height());
    if (b.area() <= 0.0)
        throw DegenerateInputError(std::string(who) + ": zero-area box");
    return b;
}
}  // namespace detail

// Reference rectangle-intersection form: one exact intersection per patch.
inline RegionMask overlap_areas_oracle(const Box& box, const PatchGrid& grid) {
    const Box b = detail::clipped_positive_box(box, grid, "overlap_areas_oracle");
    const double p = grid.patch_size;
    RegionMask m;
    m.values.assign(static_cast<std::size_t>(grid.patch_count()) + 1, 0.0);
    m.values[0] = 1.0;
    for (int r = 0; r < grid.height; ++r) {
        const double py1 = r * p, py2 = (r + 1) * p;
        const double iy = std::max(0.0, std::min(b.y2, py2) - std::max(b.y1, py1));
        if (iy <= 0.0) continue;
        for (int c = 0; c < grid.width; ++c) {
            const double px1 = c * p, px2 = (c + 1) * p;
            const double ix = std::max(0.0, std::min(b.x2, px2) - std::max(b.x1, px1));
            if (ix <= 0.0) continue;
            m.values[1 + static_cast<std::size_t>(r) * grid.width + c] =
                (ix * iy) / (p * p);
        }
    }
    return m;
}

// Factored form: per-column and per-row boundary fractions combined by outer
// product and scattered into the flat mask with the +1 CLS offset. A span of
// a single patch column (or row) uses the box extent in patch units directly.
inline RegionMask overlap_areas_factored(const Box& box, const PatchGrid& grid) {
    const Box b = detail::clipped_positive_box(box, grid, "overlap_areas_factored");
    const double p = grid.patch_size;
    const double bx1 = b.x1 / p, by1 = b.y1 / p, bx2 = b.x2 / p, by2 = b.y2 / p;
    const int a = static_cast<int>(std::floor(bx1));
    const int t = static_cast<int>(std::floor(by1));
    const int c = static_cast<int>(std::ceil(bx2));
    const int d = static_cast<int>(std::ceil(by2));

    auto fractions = [](double lo, double hi, int first, int last) {
        std::vector<double> f(static_cast<std::size_t>(last - first), 1.0);
        if (f.size() == 1) {
            f[0] = hi - lo;
        } else {
            f.front() = (first + 1) - lo;
            f.back() = hi - (last - 1);
        }
        return f;
    };
    const std::vector<double> col = fractions(bx1, bx2, a, c);
    const std::vector<double> row = fractions(by1, by2, t, d);

    RegionMask m;
    m.values.assign(static_cast<std::size_t>(grid.patch_count()) + 1, 0.0);
    m.values[0] = 1.0;
    for (int r = 0; r < static_cast<int>(row.size()); ++r)
        for (int q = 0; q < static_cast<int>(col.size()); ++q)
            m.values[1 + static_cast<std::size_t>(t + r) * grid.width + (a + q)] =
                row[r] * col[q];
    return m;
}

enum class QuantizeMode { attend_all, mask_all };

// Whole-patch quantization baseline: partially covered patches either attend
// fully (attend_all) or are dropped (mask_all).
inline RegionMask quantized_mask(const Box& box, const PatchGrid& grid,
                                 QuantizeMode mode) {
    const Box b = detail::clipped_positive_box(box, grid, "quantized_mask");
    const double p = grid.patch_size;
    RegionMask m;
    m.values.assign(static_cast<std::size_t>(grid.patch_count()) + 1, 0.0);
    m.values[0] = 1.0;
    for (int r = 0; r < grid.height; ++r) {
        for (int c = 0; c < grid.width; ++c) {
            const double px1 = c * p, py1 = r * p, px2 = (c + 1) * p, py2 = (r + 1) * p;
            const double ix = std::min(b.x2, px2) - std::max(b.x1, px1);
            const double iy = std::min(b.y2, py2) - std::max(b.y1, py1);
            const std::size_t idx = 1 + static_cast<std::size_t>(r) * grid.width + c;
            if (ix <= 0.0 || iy <= 0.0) continue;
            const bool full = b.x1 <= px1 && px2 <= b.x2 && b.y1 <= py1 && py2 <= b.y2;
            if (full)
                m.values[idx] = 1.0;
            else
                m.values[idx] = (mode == QuantizeMode::attend_all) ? 1.0 : 0.0;
        }
    }
    return m;
}

inline double iou(const Box& a, const Box& b) {
    const double ix = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
    const double iy = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
    if (ix <= 0.0 || iy <= 0.0) return 0.0;
    const double inter = ix * iy;
    const double uni = a.area() + b.area() - inter;
    if (uni <= 0.0) return 0.0;
    return inter / uni;
}

// Square local-region box around a joint, side = 0.3 x human box height,
// clipped to the image.
inline Box joint_region_box(const Keypoint& joint, const Box& human_box,
                            double image_w, double image_h) {
    const double jx = std::clamp(joint.x, 0.0, image_w);
    const double jy = std::clamp(joint.y, 0.0, image_h);
    const double half = 0.5 * 0.3 * human_box.height();
    Box b{jx - half, jy - half, jx + half, jy + half};
    return clip_box(b, image_w, image_h);
}

}  // namespace viplo
