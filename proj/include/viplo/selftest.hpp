#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "viplo/backbone.hpp"
#include "viplo/eval.hpp"
#include "viplo/hoi_head.hpp"
#include "viplo/model.hpp"
#include "viplo/pose_graph.hpp"

namespace viplo {

struct SelftestReport {
    std::vector<std::pair<std::string, bool>> checks;
    bool ok = true;

    void add(const std::string& name, bool pass) {
        checks.emplace_back(name, pass);
        ok = ok && pass;
    }
};

namespace detail {

inline Box random_box(std::mt19937_64& rng, double w, double h) {
    std::uniform_real_distribution<double> ux(0.0, w), uy(0.0, h);
    for (;;) {
        const double x1 = ux(rng), x2 = ux(rng), y1 = uy(rng), y2 = uy(rng);
        Box b{std::min(x1, x2), std::min(y1, y2), std::max(x1, x2), std::max(y1, y2)};
        if (b.area() > 0.5) return b;
    }
}

// Deliberately wrong factored variant for fault injection: single-column and
// single-row spans fall through to the general boundary formula.
inline RegionMask overlap_areas_factored_broken(const Box& box, const PatchGrid& grid) {
    const Box b = clipped_positive_box(box, grid, "factored_broken");
    const double p = grid.patch_size;
    const double bx1 = b.x1 / p, by1 = b.y1 / p, bx2 = b.x2 / p, by2 = b.y2 / p;
    const int a = static_cast<int>(std::floor(bx1));
    const int t = static_cast<int>(std::floor(by1));
    const int c = static_cast<int>(std::ceil(bx2));
    const int d = static_cast<int>(std::ceil(by2));
    auto fractions = [](double lo, double hi, int first, int last) {
        std::vector<double> f(static_cast<std::size_t>(last - first), 1.0);
        f.front() = (first + 1) - lo;
        f.back() = hi - (last - 1);  // wrong when the span is a single patch
        return f;
    };
    const auto col = fractions(bx1, bx2, a, c);
    const auto row = fractions(by1, by2, t, d);
    RegionMask m;
    m.values.assign(static_cast<std::size_t>(grid.patch_count()) + 1, 0.0);
    m.values[0] = 1.0;
    for (int r = 0; r < static_cast<int>(row.size()); ++r)
        for (int q = 0; q < static_cast<int>(col.size()); ++q)
            m.values[1 + static_cast<std::size_t>(t + r) * grid.width + (a + q)] =
                row[r] * col[q];
    return m;
}

}  // namespace detail

// Runs the invariant suite on in-memory fixtures. `inject_fault` swaps the
// factored-area computation for a broken variant so the oracle sweep must
// fail; it exists to prove the selftest can detect a regression.
inline SelftestReport selftest(std::uint64_t seed = 7, bool inject_fault = false) {
    SelftestReport report;
    std::mt19937_64 rng(seed);

    // geometry: factored vs oracle, and area conservation
    {
        bool agree = true, conserve = true;
        std::uniform_int_distribution<int> psz(1, 2);
        std::uniform_int_distribution<int> gdim(1, 16);
        for (int i = 0; i < 2000; ++i) {
            const int p = psz(rng) == 1 ? 16 : 32;
            const PatchGrid grid{p, gdim(rng), gdim(rng)};
            const Box b =
                detail::random_box(rng, grid.image_width(), grid.image_height());
            const RegionMask oracle = overlap_areas_oracle(b, grid);
            const RegionMask fact = inject_fault
                                        ? detail::overlap_areas_factored_broken(b, grid)
                                        : overlap_areas_factored(b, grid);
            double sum = 0.0;
            for (std::size_t k = 1; k < oracle.size(); ++k) {
                agree = agree && std::abs(oracle.values[k] - fact.values[k]) < 1e-6;
                sum += oracle.values[k];
            }
            conserve = conserve &&
                       std::abs(sum * p * p - clip_box(b, grid.image_width(),
                                                       grid.image_height())
                                                  .area()) < 1e-3;
        }
        // single-column span, where the broken variant must diverge
        const PatchGrid grid{16, 4, 4};
        const Box narrow{20.0, 4.0, 28.0, 60.0};
        const RegionMask oracle = overlap_areas_oracle(narrow, grid);
        const RegionMask fact = inject_fault
                                    ? detail::overlap_areas_factored_broken(narrow, grid)
                                    : overlap_areas_factored(narrow, grid);
        for (std::size_t k = 0; k < oracle.size(); ++k)
            agree = agree && std::abs(oracle.values[k] - fact.values[k]) < 1e-6;
        report.add("geometry: factored equals oracle", agree);
        report.add("geometry: area conservation", conserve);
    }

    // MOA: efficient equals naive per-region recompute
    {
        const PatchGrid grid{16, 4, 4};
        const std::size_t t = 17, c = 32;
        std::normal_distribution<double> dist(0.0, 0.02);
        EncoderLayerParams p;
        p.ln1_gain = Tensor({c});
        p.ln1_shift = Tensor({c});
        p.ln2_gain = Tensor({c});
        p.ln2_shift = Tensor({c});
        std::fill(p.ln1_gain.data.begin(), p.ln1_gain.data.end(), 1.0f);
        std::fill(p.ln2_gain.data.begin(), p.ln2_gain.data.end(), 1.0f);
        p.attn = AttentionParams{Tensor({c, c}), Tensor({c}), Tensor({c, c}),
                                 Tensor({c}),    Tensor({c, c}), Tensor({c}),
                                 Tensor({c, c}), Tensor({c})};
        p.mlp = detail::make_mlp({c, 2 * c, c});
        for (Tensor* w : {&p.attn.wq, &p.attn.wk, &p.attn.wv, &p.attn.wo,
                          &p.mlp.weights[0], &p.mlp.weights[1]})
            for (float& v : w->data) v = static_cast<float>(dist(rng));
        bool pass = true;
        for (int rep = 0; rep < 20; ++rep) {
            Tensor x({t, c});
            for (float& v : x.data) v = static_cast<float>(dist(rng));
            std::vector<RegionMask> masks;
            for (int m = 0; m < 4; ++m)
                masks.push_back(overlap_areas_oracle(
                    detail::random_box(rng, grid.image_width(), grid.image_height()),
                    grid));
            const BackboneOutput eff = moa_final_layer(x, masks, p, grid, 2);
            for (std::size_t m = 0; m < masks.size(); ++m) {
                const Tensor ref = moa_region_feature_reference(x, masks[m], p, 2);
                for (std::size_t j = 0; j < c; ++j)
                    pass = pass && std::abs(eff.cls_per_region.at(m, j) -
                                            ref.data[j]) < 1e-5;
            }
        }
        report.add("moa: efficient equals naive", pass);
    }

    // joint attention normalization
    {
        MlpSpec q_mlp = detail::make_mlp({kSpatialFeatureDim, 8, 8});
        MlpSpec k_mlp = detail::make_mlp({kJointFeatureDim, 8, 8});
        std::normal_distribution<double> dist(0.0, 0.5);
        for (MlpSpec* s : {&q_mlp, &k_mlp})
            for (Tensor& w : s->weights)
                for (float& v : w.data) v = static_cast<float>(dist(rng));
        bool pass = true;
        std::uniform_real_distribution<double> uc(0.0, 1.0);
        for (int i = 0; i < 200; ++i) {
            const Box h = detail::random_box(rng, 640, 480);
            const Box o = detail::random_box(rng, 640, 480);
            JointSet js;
            for (Keypoint& kp : js.joints)
                kp = Keypoint{uc(rng) * 640, uc(rng) * 480, uc(rng)};
            const Tensor sp = spatial_pair_features(h, o, 640, 480);
            const Tensor alpha = joint_attention(sp, js, o, q_mlp, k_mlp, 640, 480);
            double sum = 0.0;
            for (int k = 0; k < kNumJoints; ++k) {
                pass = pass && alpha.data[k] >= 0.0f;
                sum += alpha.data[k];
            }
            pass = pass && std::abs(sum - 1.0) < 1e-6;
        }
        report.add("graph: joint attention normalized", pass);
    }

    // focal loss gradient vs central finite differences
    {
        bool pass = true;
        std::uniform_real_distribution<double> uy(0.05, 0.95), ug(0.0, 2.0),
            ua(0.1, 0.9);
        for (int i = 0; i < 300; ++i) {
            const double yh = uy(rng), a = ua(rng), g = ug(rng);
            const int label = i % 2;
            const double hstep = 1e-5;
            const FocalResult r = focal_loss(yh, label, a, g);
            const double fd = (focal_loss(yh + hstep, label, a, g).loss -
                               focal_loss(yh - hstep, label, a, g).loss) /
                              (2 * hstep);
            const double rel = std::abs(r.grad - fd) /
                               std::max(1e-8, std::abs(fd));
            pass = pass && rel < 1e-4 && r.loss >= 0.0;
        }
        report.add("head: focal gradient matches finite differences", pass);
    }

    // mAP evaluator: perfect predictions score 1.0
    {
        std::vector<HOIRecord> gt;
        for (int i = 0; i < 5; ++i) {
            HOIRecord r;
            r.image_id = "img" + std::to_string(i % 2);
            r.t.human = Box{10.0 * i, 0, 10.0 * i + 8, 20};
            r.t.object = Box{5.0 * i, 30, 5.0 * i + 6, 44};
            r.t.object_class = i % 3;
            r.t.verb = i % 2;
            gt.push_back(r);
        }
        std::vector<HOIRecord> preds = gt;
        for (std::size_t i = 0; i < preds.size(); ++i)
            preds[i].t.score = 0.9 - 0.01 * static_cast<double>(i);
        const MapReport mr = evaluate_map(preds, gt, 0.5);
        report.add("eval: perfect predictions give mAP 1",
                   std::abs(mr.map - 1.0) < 1e-9);
    }

    return report;
}

inline std::string format_selftest(const SelftestReport& r) {
    std::ostringstream out;
    for (const auto& [name, pass] : r.checks)
        out << (pass ? "PASS" : "FAIL") << "  " << name << "\n";
    out << (r.ok ? "selftest ok" : "selftest FAILED") << "\n";
    return out.str();
}

}  // namespace viplo
