#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "viplo/bench.hpp"
#include "viplo/eval.hpp"
#include "viplo/formats.hpp"
#include "viplo/pipeline.hpp"
#include "viplo/selftest.hpp"

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitParse = 2;
constexpr int kExitSelftest = 3;

void write_or_print(const std::string& out_path, const std::string& body) {
    if (out_path.empty())
        std::cout << body;
    else
        viplo::detail::write_text(out_path, body);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"ViT + MOA human-object-interaction inference"};
    app.require_subcommand(1);

    std::string weights, detections, poses, image, out, pred, gt;
    double lambda = 2.8, nms_iou = 0.5, score_thresh = 0.05, eval_iou = 0.5;
    std::uint64_t seed = 0;
    int threads = 1;

    auto* infer_cmd = app.add_subcommand("infer", "run the HOI pipeline on one image");
    infer_cmd->add_option("--weights", weights, "weight file")->required();
    infer_cmd->add_option("--detections", detections, "detection file")->required();
    infer_cmd->add_option("--poses", poses, "pose file")->required();
    infer_cmd->add_option("--image", image, "raster image file")->required();
    infer_cmd->add_option("--lambda", lambda, "score composition exponent");
    infer_cmd->add_option("--nms-iou", nms_iou, "NMS IoU threshold");
    infer_cmd->add_option("--score-thresh", score_thresh, "NMS score threshold");
    infer_cmd->add_option("--threads", threads, "worker threads");
    infer_cmd->add_option("--out", out, "prediction output path");

    auto* eval_cmd = app.add_subcommand("eval", "score predictions against ground truth");
    eval_cmd->add_option("--pred", pred, "prediction file")->required();
    eval_cmd->add_option("--gt", gt, "ground-truth file")->required();
    eval_cmd->add_option("--iou", eval_iou, "matching IoU threshold");
    eval_cmd->add_option("--out", out, "report output path");

    std::vector<int> bench_widths{21, 42};
    std::vector<int> bench_regions{1, 8, 16};
    int bench_reps = 7;
    auto* bench_cmd = app.add_subcommand("bench-moa", "time efficient vs naive MOA");
    bench_cmd->add_option("--grid-widths", bench_widths, "patch grid widths (L = w*w)");
    bench_cmd->add_option("--regions", bench_regions, "region counts to sweep");
    bench_cmd->add_option("--reps", bench_reps, "repetitions per cell");
    bench_cmd->add_option("--seed", seed, "rng seed");
    bench_cmd->add_option("--threads", threads, "worker threads");
    bench_cmd->add_option("--out", out, "report output path");

    bool inject_fault = false;
    auto* selftest_cmd = app.add_subcommand("selftest", "run the invariant suite");
    selftest_cmd->add_option("--seed", seed, "rng seed");
    selftest_cmd->add_flag("--inject-fault", inject_fault,
                           "use a deliberately broken area computation");

    std::uint64_t init_seed = 42;
    viplo::ModelConfig init_cfg;
    auto* init_cmd = app.add_subcommand("init-weights", "write a seeded weight file");
    init_cmd->add_option("--out", out, "weight output path")->required();
    init_cmd->add_option("--seed", init_seed, "rng seed");
    init_cmd->add_option("--patch-size", init_cfg.patch_size, "patch size");
    init_cmd->add_option("--image-size", init_cfg.image_size, "model input size");
    init_cmd->add_option("--embed-dim", init_cfg.embed_dim, "embedding dimension");
    init_cmd->add_option("--heads", init_cfg.num_heads, "attention heads");
    init_cmd->add_option("--layers", init_cfg.num_layers, "encoder layers");
    init_cmd->add_option("--mlp-hidden", init_cfg.mlp_hidden, "MLP hidden width");
    init_cmd->add_option("--node-dim", init_cfg.node_dim, "node encoding dim");
    init_cmd->add_option("--edge-dim", init_cfg.edge_dim, "edge encoding dim");
    init_cmd->add_option("--verbs", init_cfg.verb_classes, "verb vocabulary size");
    init_cmd->add_option("--steps", init_cfg.steps, "message passing steps");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitUsage;
    }

    try {
        if (infer_cmd->parsed()) {
            const viplo::ModelParams params = viplo::read_weights(weights);
            const viplo::DetectionFile df = viplo::parse_detections(detections);
            const viplo::PoseFile pf = viplo::parse_poses(poses);
            const viplo::Image img = viplo::read_image(image);
            viplo::InferOptions opt;
            opt.lambda = lambda;
            opt.nms_iou = nms_iou;
            opt.nms_score_threshold = score_thresh;
            opt.threads = threads;
            viplo::TripletFile result;
            result.predictions = true;
            result.records = viplo::infer(img, df, pf, params, opt);
            write_or_print(out, viplo::serialize(result));
        } else if (eval_cmd->parsed()) {
            const viplo::TripletFile p = viplo::parse_triplets(pred);
            const viplo::TripletFile g = viplo::parse_triplets(gt);
            const viplo::MapReport report =
                viplo::evaluate_map(p.records, g.records, eval_iou);
            write_or_print(out, viplo::format_map_report(report));
        } else if (bench_cmd->parsed()) {
            const viplo::BenchReport report = viplo::bench_moa(
                bench_widths, bench_regions, bench_reps, seed, threads);
            write_or_print(out, viplo::format_bench(report));
            for (const viplo::BenchCell& c : report.cells)
                if (!c.outputs_equal) return kExitSelftest;
        } else if (selftest_cmd->parsed()) {
            const viplo::SelftestReport report = viplo::selftest(seed ? seed : 7,
                                                                 inject_fault);
            std::cout << viplo::format_selftest(report);
            if (!report.ok) return kExitSelftest;
        } else if (init_cmd->parsed()) {
            viplo::write_weights(out, viplo::seeded_model(init_cfg, init_seed));
        }
    } catch (const viplo::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitParse;
    } catch (const viplo::DimensionError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitParse;
    } catch (const viplo::DegenerateInputError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitParse;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    }
    return 0;
}
