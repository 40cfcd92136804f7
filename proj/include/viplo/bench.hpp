#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <ctime>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "viplo/backbone.hpp"
#include "viplo/model.hpp"

namespace viplo {

struct BenchCell {
    int patches = 0;        // L
    int regions = 0;        // M
    double naive_ms = 0.0;      // median, full final-layer recompute per region
    double efficient_ms = 0.0;  // median, shared Q/K/V + CLS row per region
    double naive_min_ms = 0.0;      // fastest observed repetition
    double efficient_min_ms = 0.0;  // fastest observed repetition
    bool outputs_equal = false;
    double max_diff = 0.0;
};

struct BenchReport {
    std::vector<BenchCell> cells;
    int reps = 0;
};

namespace detail {

inline double median_ms(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Thread CPU time where available: immune to scheduler preemption, which
// otherwise dominates the noise for runs in the tens of milliseconds.
inline double now_ms() {
#if defined(CLOCK_THREAD_CPUTIME_ID)
    timespec ts;
    if (clock_gettime(CLOCK_THREAD_CPUTIME_ID, &ts) == 0)
        return ts.tv_sec * 1e3 + ts.tv_nsec * 1e-6;
#endif
    return std::chrono::duration<double, std::milli>(
               std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

template <typename Fn>
double time_ms(Fn&& fn) {
    const double t0 = now_ms();
    fn();
    return now_ms() - t0;
}

}  // namespace detail

// Times the efficient MOA final layer against the naive per-region full
// recompute, asserting per-element agreement (1e-5) before any timing.
inline BenchReport bench_moa(const std::vector<int>& grid_widths,
                             const std::vector<int>& region_counts, int reps,
                             std::uint64_t seed, int threads = 1,
                             int embed_dim = 64, int heads = 2) {
    BenchReport report;
    report.reps = reps;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> dist(0.0, 0.02);
    for (const int w : grid_widths) {
        const PatchGrid grid{16, w, w};
        const std::size_t t = static_cast<std::size_t>(grid.patch_count()) + 1;
        const std::size_t c = static_cast<std::size_t>(embed_dim);

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
        auto fill = [&](Tensor& x) {
            for (float& v : x.data) v = static_cast<float>(dist(rng));
        };
        fill(p.attn.wq);
        fill(p.attn.wk);
        fill(p.attn.wv);
        fill(p.attn.wo);
        fill(p.mlp.weights[0]);
        fill(p.mlp.weights[1]);

        Tensor penultimate({t, c});
        for (float& v : penultimate.data) v = static_cast<float>(dist(rng));

        std::uniform_real_distribution<double> coord(0.0, grid.image_width());
        for (const int m : region_counts) {
            std::vector<RegionMask> masks;
            for (int i = 0; i < m; ++i) {
                Box b;
                for (;;) {
                    const double x1 = coord(rng), x2 = coord(rng);
                    const double y1 = coord(rng), y2 = coord(rng);
                    b = Box{std::min(x1, x2), std::min(y1, y2), std::max(x1, x2),
                            std::max(y1, y2)};
                    if (b.area() > 1.0) break;
                }
                masks.push_back(overlap_areas_factored(b, grid));
            }

            BenchCell cell;
            cell.patches = grid.patch_count();
            cell.regions = m;

            const BackboneOutput eff =
                moa_final_layer(penultimate, masks, p, grid, heads, threads);
            cell.outputs_equal = true;
            for (int i = 0; i < m; ++i) {
                const Tensor ref =
                    moa_region_feature_reference(penultimate, masks[i], p, heads);
                for (std::size_t j = 0; j < c; ++j) {
                    const double d = std::abs(
                        static_cast<double>(eff.cls_per_region.at(i, j)) - ref.data[j]);
                    cell.max_diff = std::max(cell.max_diff, d);
                }
            }
            cell.outputs_equal = cell.max_diff < 1e-5;

            std::vector<double> eff_times, naive_times;
            for (int r = 0; r < reps; ++r) {
                eff_times.push_back(detail::time_ms([&] {
                    volatile float sink = moa_final_layer(penultimate, masks, p, grid,
                                                          heads, threads)
                                              .cls_per_region.data[0];
                    (void)sink;
                }));
                naive_times.push_back(detail::time_ms([&] {
                    float acc = 0.0f;
                    for (int i = 0; i < m; ++i)
                        acc += moa_region_feature_reference(penultimate, masks[i], p,
                                                            heads)
                                   .data[0];
                    volatile float sink = acc;
                    (void)sink;
                }));
            }
            cell.efficient_ms = detail::median_ms(eff_times);
            cell.naive_ms = detail::median_ms(naive_times);
            cell.efficient_min_ms = *std::min_element(eff_times.begin(), eff_times.end());
            cell.naive_min_ms = *std::min_element(naive_times.begin(), naive_times.end());
            report.cells.push_back(cell);
        }
    }
    return report;
}

struct TrendCell {
    int patches = 0;
    double ratio = 0.0;  // efficient/naive time ratio
    bool outputs_equal = false;
    double max_diff = 0.0;
};

struct TrendReport {
    std::vector<TrendCell> cells;
    int rounds = 0;
    int regions = 0;
};

namespace detail {

struct TrendFixture {
    PatchGrid grid{16, 1, 1};
    EncoderLayerParams layer;
    Tensor penultimate;
    std::vector<RegionMask> masks;
    int eff_batch = 1, naive_batch = 1;
    std::vector<double> round_ratios;
};

}  // namespace detail

// Complexity-trend measurement for the efficient/naive time ratio across grid
// sizes. Per-cell timings drift with machine load on the scale of seconds, so
// the cells are interleaved round-robin and each round contributes one
// efficient/naive ratio taken from adjacent samples; the per-cell estimate is
// the median of those round ratios. Short runs are batched so every timed
// sample is long enough to average out scheduler noise.
inline TrendReport bench_moa_trend(const std::vector<int>& grid_widths, int regions,
                                   int rounds, std::uint64_t seed,
                                   int embed_dim = 8, int heads = 2) {
    TrendReport report;
    report.rounds = rounds;
    report.regions = regions;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> dist(0.0, 0.02);
    const std::size_t c = static_cast<std::size_t>(embed_dim);

    std::vector<detail::TrendFixture> fixtures;
    for (const int w : grid_widths) {
        detail::TrendFixture f;
        f.grid = PatchGrid{16, w, w};
        const std::size_t t = static_cast<std::size_t>(f.grid.patch_count()) + 1;
        EncoderLayerParams& p = f.layer;
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
        for (Tensor* wt : {&p.attn.wq, &p.attn.wk, &p.attn.wv, &p.attn.wo,
                           &p.mlp.weights[0], &p.mlp.weights[1]})
            for (float& v : wt->data) v = static_cast<float>(dist(rng));
        f.penultimate = Tensor({t, c});
        for (float& v : f.penultimate.data) v = static_cast<float>(dist(rng));
        std::uniform_real_distribution<double> coord(0.0, f.grid.image_width());
        for (int i = 0; i < regions; ++i) {
            Box b;
            for (;;) {
                const double x1 = coord(rng), x2 = coord(rng);
                const double y1 = coord(rng), y2 = coord(rng);
                b = Box{std::min(x1, x2), std::min(y1, y2), std::max(x1, x2),
                        std::max(y1, y2)};
                if (b.area() > 1.0) break;
            }
            f.masks.push_back(overlap_areas_factored(b, f.grid));
        }
        fixtures.push_back(std::move(f));
    }

    // equality check (and warmup) before any timing
    for (std::size_t i = 0; i < fixtures.size(); ++i) {
        detail::TrendFixture& f = fixtures[i];
        TrendCell cell;
        cell.patches = f.grid.patch_count();
        const BackboneOutput eff =
            moa_final_layer(f.penultimate, f.masks, f.layer, f.grid, heads);
        for (int m = 0; m < regions; ++m) {
            const Tensor ref =
                moa_region_feature_reference(f.penultimate, f.masks[m], f.layer, heads);
            for (std::size_t j = 0; j < c; ++j)
                cell.max_diff = std::max(
                    cell.max_diff,
                    std::abs(static_cast<double>(eff.cls_per_region.at(m, j)) -
                             ref.data[j]));
        }
        cell.outputs_equal = cell.max_diff < 1e-5;
        report.cells.push_back(cell);

        // calibrate batch sizes so each timed sample is at least ~40 ms
        const double eff_once = detail::time_ms([&] {
            volatile float s =
                moa_final_layer(f.penultimate, f.masks, f.layer, f.grid, heads)
                    .cls_per_region.data[0];
            (void)s;
        });
        const double naive_once = detail::time_ms([&] {
            float a = 0.0f;
            for (const RegionMask& mk : f.masks)
                a += moa_region_feature_reference(f.penultimate, mk, f.layer, heads)
                         .data[0];
            volatile float s = a;
            (void)s;
        });
        const double target = 40.0;
        f.eff_batch = static_cast<int>(
            std::min(64.0, std::max(1.0, std::ceil(target / std::max(eff_once, 0.01)))));
        f.naive_batch = static_cast<int>(
            std::min(16.0,
                     std::max(1.0, std::ceil(target / std::max(naive_once, 0.01)))));
    }

    for (int r = 0; r < rounds; ++r) {
        for (detail::TrendFixture& f : fixtures) {
            const double te =
                detail::time_ms([&] {
                    float s = 0.0f;
                    for (int k = 0; k < f.eff_batch; ++k)
                        s += moa_final_layer(f.penultimate, f.masks, f.layer, f.grid,
                                             heads)
                                 .cls_per_region.data[0];
                    volatile float sink = s;
                    (void)sink;
                }) /
                f.eff_batch;
            const double tn =
                detail::time_ms([&] {
                    float a = 0.0f;
                    for (int k = 0; k < f.naive_batch; ++k)
                        for (const RegionMask& mk : f.masks)
                            a += moa_region_feature_reference(f.penultimate, mk,
                                                              f.layer, heads)
                                     .data[0];
                    volatile float sink = a;
                    (void)sink;
                }) /
                f.naive_batch;
            f.round_ratios.push_back(te / tn);
        }
    }
    for (std::size_t i = 0; i < fixtures.size(); ++i)
        report.cells[i].ratio = detail::median_ms(fixtures[i].round_ratios);
    return report;
}

inline std::string format_trend(const TrendReport& r) {
    std::ostringstream out;
    out << "moa ratio trend (median over " << r.rounds << " interleaved rounds, M="
        << r.regions << ")\n";
    out << "L\tefficient/naive\tequal\n";
    for (const TrendCell& c : r.cells)
        out << c.patches << "\t" << c.ratio << "\t"
            << (c.outputs_equal ? "yes" : "NO") << "\n";
    return out.str();
}

inline std::string format_bench(const BenchReport& r) {
    std::ostringstream out;
    out << "moa benchmark (medians over " << r.reps << " reps)\n";
    out << "L\tM\tnaive_ms\tefficient_ms\tratio\tmin_ratio\tequal\n";
    for (const BenchCell& c : r.cells)
        out << c.patches << "\t" << c.regions << "\t" << c.naive_ms << "\t"
            << c.efficient_ms << "\t" << c.efficient_ms / c.naive_ms << "\t"
            << c.efficient_min_ms / c.naive_min_ms << "\t"
            << (c.outputs_equal ? "yes" : "NO") << "\n";
    return out.str();
}

}  // namespace viplo
