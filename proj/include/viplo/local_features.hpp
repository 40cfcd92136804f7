#pragma once

#include <vector>

#include "viplo/geometry.hpp"
#include "viplo/tensor.hpp"

namespace viplo {

struct RoiAlignResult {
    Tensor values;  // [R, R, C]
    bool degenerate = false;
};

// Quantization-free region pooling over the patch map. The box is given in
// pixel coordinates and converted to map coordinates with the half-pixel
// convention (patch centers sit at integer coordinates). Each of the R x R
// bins is sampled at 2x2 regularly spaced bilinear points and averaged.
inline RoiAlignResult roi_align(const Tensor& map, const Box& box, int r,
                                const PatchGrid& grid) {
    check(map.rank() == 3, "roi_align expects [H, W, C]");
    check(r >= 1, "roi_align output resolution must be >= 1");
    const std::size_t c = map.shape[2];
    RoiAlignResult res;
    res.values = Tensor({static_cast<std::size_t>(r), static_cast<std::size_t>(r), c});
    if (box.area() <= 0.0) {
        res.degenerate = true;
        return res;
    }
    const double p = grid.patch_size;
    const double mx1 = box.x1 / p - 0.5, my1 = box.y1 / p - 0.5;
    const double bw = (box.x2 - box.x1) / p / r;
    const double bh = (box.y2 - box.y1) / p / r;
    for (int by = 0; by < r; ++by) {
        for (int bx = 0; bx < r; ++bx) {
            std::vector<double> acc(c, 0.0);
            for (int sy = 0; sy < 2; ++sy) {
                for (int sx = 0; sx < 2; ++sx) {
                    const double x = mx1 + (bx + (sx + 0.5) / 2.0) * bw;
                    const double y = my1 + (by + (sy + 0.5) / 2.0) * bh;
                    const Tensor v = bilinear_sample(map, x, y);
                    for (std::size_t j = 0; j < c; ++j) acc[j] += v.data[j];
                }
            }
            for (std::size_t j = 0; j < c; ++j)
                res.values.at(static_cast<std::size_t>(by),
                              static_cast<std::size_t>(bx), j) =
                    static_cast<float>(acc[j] / 4.0);
        }
    }
    return res;
}

struct LocalFeatureSet {
    std::vector<Tensor> features;  // exactly 17, each [C_node]
};

// Per-joint local appearance: joint region box -> ROIAlign (R=3) -> spatial
// mean -> linear projection. A joint whose region clips to nothing yields a
// zero vector.
inline LocalFeatureSet extract_joint_locals(const Tensor& patch_map,
                                            const Box& human_box,
                                            const JointSet& joints,
                                            const PatchGrid& grid,
                                            const MlpSpec& projector) {
    const std::size_t c = patch_map.shape[2];
    check(projector.input_width() == c, "extract_joint_locals projector width");
    const double img_w = grid.image_width();
    const double img_h = grid.image_height();
    LocalFeatureSet out;
    out.features.reserve(kNumJoints);
    for (const Keypoint& kp : joints.joints) {
        const Box jb = joint_region_box(kp, human_box, img_w, img_h);
        const RoiAlignResult roi = roi_align(patch_map, jb, 3, grid);
        if (roi.degenerate) {
            out.features.push_back(Tensor({projector.output_width()}));
            continue;
        }
        Tensor pooled({1, c});
        for (std::size_t j = 0; j < c; ++j) {
            double acc = 0.0;
            for (std::size_t b = 0; b < 9; ++b) acc += roi.values.data[b * c + j];
            pooled.data[j] = static_cast<float>(acc / 9.0);
        }
        Tensor f = mlp_forward(projector, pooled);
        f.shape = {projector.output_width()};
        out.features.push_back(std::move(f));
    }
    return out;
}

}  // namespace viplo
