#pragma once

#include <optional>
#include <vector>

#include "viplo/backbone.hpp"
#include "viplo/eval.hpp"
#include "viplo/formats.hpp"
#include "viplo/hoi_head.hpp"
#include "viplo/local_features.hpp"
#include "viplo/model.hpp"
#include "viplo/pose_graph.hpp"

namespace viplo {

struct InferOptions {
    double lambda = 2.8;
    double nms_iou = 0.5;
    double nms_score_threshold = 0.05;
    double output_score_threshold = 0.0;
    int threads = 1;
};

// Raster to a square [S, S, 3] float tensor in [0, 1], bilinear resize.
inline Tensor image_to_tensor(const Image& img, int target_size) {
    Tensor src({static_cast<std::size_t>(img.height),
                static_cast<std::size_t>(img.width), 3});
    for (std::size_t i = 0; i < src.size(); ++i)
        src.data[i] = static_cast<float>(img.rgb[i]) / 255.0f;
    if (img.width == target_size && img.height == target_size) return src;
    Tensor out({static_cast<std::size_t>(target_size),
                static_cast<std::size_t>(target_size), 3});
    const double sx = static_cast<double>(img.width) / target_size;
    const double sy = static_cast<double>(img.height) / target_size;
    for (int y = 0; y < target_size; ++y) {
        for (int x = 0; x < target_size; ++x) {
            const Tensor v = bilinear_sample(src, (x + 0.5) * sx - 0.5,
                                             (y + 0.5) * sy - 0.5);
            for (std::size_t ch = 0; ch < 3; ++ch)
                out.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x), ch) =
                    v.data[ch];
        }
    }
    return out;
}

// Full pipeline for one image: NMS over the detections, ViT trunk, MOA final
// layer per surviving region, joint local features, pose graph, triplet
// emission. Output boxes are in the detection file's coordinate frame.
inline std::vector<HOIRecord> infer(const Image& img, const DetectionFile& df,
                                    const PoseFile& pf, const ModelParams& params,
                                    const InferOptions& opt = {}) {
    params.cfg.validate();
    const int s = static_cast<int>(params.cfg.image_size);
    const double sx = static_cast<double>(s) / df.width;
    const double sy = static_cast<double>(s) / df.height;

    // scale detections into model coordinates, dropping empty boxes
    std::vector<Detection> scaled;
    std::vector<std::size_t> origin;
    for (std::size_t i = 0; i < df.detections.size(); ++i) {
        Detection d = df.detections[i];
        d.box = clip_box(Box{d.box.x1 * sx, d.box.y1 * sy, d.box.x2 * sx,
                             d.box.y2 * sy},
                         s, s);
        if (d.box.area() <= 0.0) continue;
        scaled.push_back(d);
        origin.push_back(i);
    }
    const std::vector<std::size_t> kept =
        nms(scaled, opt.nms_iou, opt.nms_score_threshold);

    std::vector<Detection> dets;
    std::vector<std::optional<JointSet>> poses;
    for (const std::size_t k : kept) {
        dets.push_back(scaled[k]);
        auto it = pf.poses.find(static_cast<int>(origin[k]));
        if (it != pf.poses.end()) {
            JointSet js = it->second;
            for (Keypoint& kp : js.joints) {
                kp.x *= sx;
                kp.y *= sy;
            }
            poses.emplace_back(js);
        } else {
            poses.emplace_back(std::nullopt);
        }
    }
    bool any_human = false;
    for (std::size_t i = 0; i < dets.size(); ++i) {
        if (dets[i].class_id != kPersonClass) continue;
        if (!poses[i])
            throw ParseError("person detection " + std::to_string(origin[kept[i]]) +
                             " has no pose entry");
        any_human = true;
    }
    if (dets.empty() || !any_human) return {};

    const PatchGrid grid = params.vit.cfg.grid();
    std::vector<RegionMask> masks;
    masks.reserve(dets.size());
    for (const Detection& d : dets)
        masks.push_back(overlap_areas_factored(d.box, grid));

    const Tensor image = image_to_tensor(img, s);
    const Tensor penultimate = run_trunk(image, params.vit);
    const BackboneOutput bb =
        moa_final_layer(penultimate, masks, params.vit.layers.back(), grid,
                        params.vit.cfg.num_heads, opt.threads);
    if (!bb.degenerate_regions.empty())
        throw DegenerateInputError("region with empty overlap mask");

    std::vector<std::optional<LocalFeatureSet>> locals(dets.size());
    for (std::size_t i = 0; i < dets.size(); ++i)
        if (poses[i])
            locals[i] = extract_joint_locals(bb.patch_map, dets[i].box, *poses[i],
                                             grid, params.graph.local_projector);

    const GraphState state = run_graph(bb.cls_per_region, dets, poses, locals, s, s,
                                       params.graph);
    const std::vector<HOITriplet> triplets =
        emit_triplets(state, dets, params.graph, opt.lambda,
                      opt.output_score_threshold);

    std::vector<HOIRecord> out;
    out.reserve(triplets.size());
    for (const HOITriplet& t : triplets) {
        HOIRecord r;
        r.image_id = df.image_id;
        r.t = t;
        r.t.human = Box{t.human.x1 / sx, t.human.y1 / sy, t.human.x2 / sx,
                        t.human.y2 / sy};
        r.t.object = Box{t.object.x1 / sx, t.object.y1 / sy, t.object.x2 / sx,
                         t.object.y2 / sy};
        out.push_back(std::move(r));
    }
    return out;
}

}  // namespace viplo
