#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "viplo/eval.hpp"
#include "viplo/formats.hpp"
#include "viplo/pipeline.hpp"

using namespace viplo;

namespace {

std::mt19937_64 rng(31415);

struct TempDir {
    std::filesystem::path path;
    TempDir() {
        path = std::filesystem::temp_directory_path() /
               ("viplo_test_" + std::to_string(rng()));
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Box random_box(double extent = 100.0) {
    std::uniform_real_distribution<double> u(0.0, extent);
    for (;;) {
        const double x1 = u(rng), x2 = u(rng), y1 = u(rng), y2 = u(rng);
        Box b{std::min(x1, x2), std::min(y1, y2), std::max(x1, x2), std::max(y1, y2)};
        if (b.area() > 1.0) return b;
    }
}

HOIRecord rec(const std::string& img, Box h, Box o, int cls, int verb,
              double score = 0.0) {
    HOIRecord r;
    r.image_id = img;
    r.t = HOITriplet{h, o, cls, verb, score};
    return r;
}

// exhaustive matcher oracle for one category of one image set: tries all
// assignments of ranked predictions to ground truth and reports the flag
// sequence produced by greedy best-IoU matching done with plain loops
std::vector<int> greedy_tp_oracle(const std::vector<HOIRecord>& preds,
                                  const std::vector<HOIRecord>& gts, double thr) {
    std::vector<std::size_t> order(preds.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return preds[a].t.score > preds[b].t.score;
    });
    std::vector<char> used(gts.size(), 0);
    std::vector<int> tp(preds.size(), 0);
    for (std::size_t r = 0; r < order.size(); ++r) {
        const HOIRecord& p = preds[order[r]];
        double best = -1.0;
        std::size_t pick = 0;
        for (std::size_t g = 0; g < gts.size(); ++g) {
            if (used[g] || gts[g].image_id != p.image_id) continue;
            const double ih = iou(p.t.human, gts[g].t.human);
            const double io = iou(p.t.object, gts[g].t.object);
            if (ih < thr || io < thr) continue;
            if (std::min(ih, io) > best) {
                best = std::min(ih, io);
                pick = g;
            }
        }
        if (best >= 0.0) {
            used[pick] = 1;
            tp[r] = 1;
        }
    }
    return tp;
}

double ap_oracle(std::vector<int> tp, std::size_t gt) {
    double ap = 0.0, best = 0.0;
    std::size_t acc = 0;
    // walk from the end keeping the running max precision
    std::vector<double> prec(tp.size());
    for (std::size_t i = 0; i < tp.size(); ++i) {
        acc += tp[i];
        prec[i] = static_cast<double>(acc) / (i + 1);
    }
    for (std::size_t i = tp.size(); i-- > 0;) {
        best = std::max(best, prec[i]);
        if (tp[i]) ap += best / gt;
    }
    return ap;
}

}  // namespace

TEST_CASE("detection file round trip") {
    DetectionFile f;
    f.image_id = "img_007";
    f.width = 640;
    f.height = 480;
    f.detections = {{Box{1.5, 2.25, 100, 200.125}, kPersonClass, 0.95},
                    {Box{50, 60, 70, 80}, 13, 0.5}};
    TempDir tmp;
    const std::string path = tmp.file("dets.txt");
    detail::write_text(path, serialize(f));
    const DetectionFile g = parse_detections(path);
    CHECK(serialize(g) == serialize(f));
    CHECK(g.image_id == "img_007");
    CHECK(g.detections.size() == 2);
    CHECK(g.detections[0].box.y2 == 200.125);

    detail::write_text(path, "not a header\n");
    CHECK_THROWS_AS(parse_detections(path), ParseError);
    detail::write_text(path, "viplo-detections 1\nimage x\nsize 10 10\ndet 0 0 1 1 0 2\n");
    CHECK_THROWS_AS(parse_detections(path), ParseError);  // score out of range
    detail::write_text(path, "viplo-detections 1\nimage x\ndet 0 0 1 1 0 0.5\n");
    CHECK_THROWS_AS(parse_detections(path), ParseError);  // missing size
}

TEST_CASE("pose file round trip") {
    PoseFile f;
    std::uniform_real_distribution<double> u(0.0, 400.0);
    for (int idx : {0, 3}) {
        JointSet js;
        for (int k = 0; k < kNumJoints; ++k)
            js.joints[k] = Keypoint{u(rng), u(rng), (k + 1) / 20.0};
        f.poses[idx] = js;
    }
    TempDir tmp;
    const std::string path = tmp.file("poses.txt");
    detail::write_text(path, serialize(f));
    const PoseFile g = parse_poses(path);
    CHECK(serialize(g) == serialize(f));
    REQUIRE(g.poses.count(3) == 1);
    CHECK(g.poses.at(3).joints[16].confidence == doctest::Approx(17 / 20.0));

    detail::write_text(path, "viplo-poses 1\npose 0\nkp 1 2 0.5\n");
    CHECK_THROWS_AS(parse_poses(path), ParseError);  // not 17 keypoints
    detail::write_text(path, "viplo-poses 1\nkp 1 2 0.5\n");
    CHECK_THROWS_AS(parse_poses(path), ParseError);  // stray keypoint
}

TEST_CASE("triplet file round trip, both flavors") {
    TempDir tmp;
    for (bool predictions : {true, false}) {
        TripletFile f;
        f.predictions = predictions;
        for (int i = 0; i < 5; ++i)
            f.records.push_back(rec("im" + std::to_string(i % 2), random_box(),
                                    random_box(), i, 10 + i,
                                    predictions ? 0.1 * (i + 1) : 0.0));
        const std::string path = tmp.file("trip.txt");
        detail::write_text(path, serialize(f));
        const TripletFile g = parse_triplets(path);
        CHECK(g.predictions == predictions);
        CHECK(serialize(g) == serialize(f));
    }
    const std::string bad = tmp.file("bad.txt");
    detail::write_text(bad, "viplo-predictions 1\nhoi im 0 0 1 1 0 0 1 1 2 3\n");
    CHECK_THROWS_AS(parse_triplets(bad), ParseError);  // missing score column
}

TEST_CASE("image round trip") {
    Image img;
    img.width = 5;
    img.height = 3;
    img.rgb.resize(45);
    for (std::size_t i = 0; i < img.rgb.size(); ++i)
        img.rgb[i] = static_cast<std::uint8_t>(i * 7 % 256);
    TempDir tmp;
    const std::string path = tmp.file("img.vimg");
    write_image(path, img);
    const Image g = read_image(path);
    CHECK(g.width == 5);
    CHECK(g.height == 3);
    CHECK(g.rgb == img.rgb);

    detail::write_text(path, "VIMG1\n5 3\nshort");
    CHECK_THROWS_AS(read_image(path), ParseError);
}

TEST_CASE("weight file round trip is byte-for-byte stable") {
    ModelConfig cfg;
    cfg.patch_size = 16;
    cfg.image_size = 64;
    cfg.embed_dim = 8;
    cfg.num_heads = 2;
    cfg.num_layers = 2;
    cfg.mlp_hidden = 16;
    cfg.node_dim = 8;
    cfg.edge_dim = 8;
    cfg.verb_classes = 5;
    const ModelParams m = seeded_model(cfg, 99);
    TempDir tmp;
    const std::string a = tmp.file("a.wt"), b = tmp.file("b.wt");
    write_weights(a, m);
    const ModelParams n = read_weights(a);
    write_weights(b, n);
    CHECK(slurp(a) == slurp(b));
    CHECK(n.cfg.verb_classes == 5);
    CHECK(n.vit.pos_embed.data == m.vit.pos_embed.data);
}

TEST_CASE("weight file corruption is rejected") {
    ModelConfig cfg;
    cfg.patch_size = 16;
    cfg.image_size = 32;
    cfg.embed_dim = 4;
    cfg.num_heads = 2;
    cfg.num_layers = 2;
    cfg.mlp_hidden = 8;
    cfg.node_dim = 4;
    cfg.edge_dim = 4;
    cfg.verb_classes = 2;
    const ModelParams m = seeded_model(cfg, 5);
    TempDir tmp;
    const std::string path = tmp.file("w.wt");
    write_weights(path, m);
    std::string body = slurp(path);

    // bad magic
    std::string bad = body;
    bad[0] = 'X';
    detail::write_text(path, bad);
    CHECK_THROWS_AS(read_weights(path), ParseError);

    // truncation
    detail::write_text(path, body.substr(0, body.size() / 2));
    CHECK_THROWS_AS(read_weights(path), ParseError);

    // corrupt the first tensor's name so a required tensor goes missing
    bad = body;
    const std::size_t name_pos = 8 + 4 + 40 + 4 + 4;  // first name byte
    bad[name_pos] = 'z';
    detail::write_text(path, bad);
    CHECK_THROWS_AS(read_weights(path), ParseError);

    // bad config block (zero patch size)
    bad = body;
    for (int i = 0; i < 4; ++i) bad[12 + i] = '\0';
    detail::write_text(path, bad);
    CHECK_THROWS_AS(read_weights(path), ParseError);
}

TEST_CASE("evaluate_map: perfect predictions and total misses") {
    std::vector<HOIRecord> gt;
    gt.push_back(rec("a", Box{0, 0, 10, 20}, Box{5, 5, 15, 15}, 3, 7));
    gt.push_back(rec("a", Box{30, 30, 60, 90}, Box{40, 40, 70, 70}, 3, 7));
    gt.push_back(rec("b", Box{1, 1, 9, 9}, Box{2, 2, 8, 8}, 4, 11));

    std::vector<HOIRecord> perfect = gt;
    for (std::size_t i = 0; i < perfect.size(); ++i)
        perfect[i].t.score = 0.9 - 0.1 * static_cast<double>(i);
    const MapReport r = evaluate_map(perfect, gt);
    CHECK(r.map == doctest::Approx(1.0));
    REQUIRE(r.per_category.size() == 2);
    for (const CategoryAP& c : r.per_category) CHECK(c.ap == doctest::Approx(1.0));

    // zero-overlap predictions score zero
    std::vector<HOIRecord> miss;
    miss.push_back(rec("a", Box{500, 500, 510, 520}, Box{505, 505, 515, 515}, 3, 7, 0.9));
    const MapReport r0 = evaluate_map(miss, gt);
    CHECK(r0.map == doctest::Approx(0.0));

    CHECK_THROWS_AS(evaluate_map(perfect, {}), DegenerateInputError);
}

TEST_CASE("evaluate_map crafted ranking case") {
    // one category, 3 GT in one image, 6 predictions: ranks 1,3,5 hit
    const Box g1{0, 0, 10, 10}, g2{20, 20, 30, 30}, g3{40, 40, 50, 50};
    const Box far{80, 80, 90, 90};
    std::vector<HOIRecord> gt = {rec("a", g1, g1, 1, 2), rec("a", g2, g2, 1, 2),
                                 rec("a", g3, g3, 1, 2)};
    std::vector<HOIRecord> preds = {
        rec("a", g1, g1, 1, 2, 0.9),   // tp
        rec("a", far, far, 1, 2, 0.8), // fp
        rec("a", g2, g2, 1, 2, 0.7),   // tp
        rec("a", g1, g1, 1, 2, 0.6),   // fp: g1 already matched
        rec("a", g3, g3, 1, 2, 0.5),   // tp
        rec("a", far, far, 1, 2, 0.4), // fp
    };
    const MapReport r = evaluate_map(preds, gt);
    // tp pattern 1,0,1,0,1,0 -> AP = (1 + 2/3 + 3/5) / 3
    CHECK(r.map == doctest::Approx((1.0 + 2.0 / 3.0 + 3.0 / 5.0) / 3.0).epsilon(1e-9));
}

TEST_CASE("evaluate_map matches the oracle on random inputs") {
    std::uniform_real_distribution<double> us(0.0, 1.0);
    std::uniform_int_distribution<int> ni(0, 1);
    for (int rep = 0; rep < 60; ++rep) {
        std::vector<HOIRecord> gt, preds;
        std::uniform_int_distribution<int> ng(1, 6), np(0, 12);
        const int g = ng(rng), p = np(rng);
        for (int i = 0; i < g; ++i)
            gt.push_back(rec(ni(rng) ? "a" : "b", random_box(), random_box(), 1, 2));
        for (int i = 0; i < p; ++i) {
            // mix exact copies of GT boxes (possible hits) with random noise
            if (!gt.empty() && ni(rng)) {
                const HOIRecord& src = gt[static_cast<std::size_t>(rng() % gt.size())];
                preds.push_back(rec(ni(rng) ? "a" : "b", src.t.human, src.t.object, 1,
                                    2, us(rng)));
            } else {
                preds.push_back(
                    rec(ni(rng) ? "a" : "b", random_box(), random_box(), 1, 2, us(rng)));
            }
        }
        const MapReport r = evaluate_map(preds, gt, 0.5);
        const std::vector<int> tp = greedy_tp_oracle(preds, gt, 0.5);
        const double want = p == 0 ? 0.0 : ap_oracle(tp, gt.size());
        REQUIRE(r.per_category.size() == 1);
        CHECK(r.per_category[0].ap == doctest::Approx(want).epsilon(1e-9));
    }
}

TEST_CASE("evaluate_map is invariant to prediction order at distinct scores") {
    std::vector<HOIRecord> gt, preds;
    for (int i = 0; i < 4; ++i)
        gt.push_back(rec("a", random_box(), random_box(), 2, 5));
    for (int i = 0; i < 8; ++i) {
        const HOIRecord& src = gt[static_cast<std::size_t>(i) % gt.size()];
        preds.push_back(rec("a", src.t.human, src.t.object, 2, 5, 0.05 + 0.1 * i));
    }
    const double base = evaluate_map(preds, gt).map;
    std::shuffle(preds.begin(), preds.end(), rng);
    CHECK(evaluate_map(preds, gt).map == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("infer: empty inputs and determinism across thread counts") {
    ModelConfig cfg;
    cfg.patch_size = 16;
    cfg.image_size = 64;
    cfg.embed_dim = 8;
    cfg.num_heads = 2;
    cfg.num_layers = 2;
    cfg.mlp_hidden = 16;
    cfg.node_dim = 8;
    cfg.edge_dim = 8;
    cfg.verb_classes = 4;
    const ModelParams params = seeded_model(cfg, 11);

    Image img;
    img.width = 80;
    img.height = 60;
    img.rgb.resize(static_cast<std::size_t>(80 * 60 * 3));
    for (std::size_t i = 0; i < img.rgb.size(); ++i)
        img.rgb[i] = static_cast<std::uint8_t>((i * 31) % 251);

    DetectionFile df;
    df.image_id = "x";
    df.width = 80;
    df.height = 60;

    // no detections -> no triplets
    PoseFile pf;
    CHECK(infer(img, df, pf, params).empty());

    df.detections = {{Box{5, 5, 40, 55}, kPersonClass, 0.9},
                     {Box{30, 20, 70, 50}, 6, 0.8}};
    JointSet js;
    std::uniform_real_distribution<double> ux(6.0, 39.0), uy(6.0, 54.0);
    for (int k = 0; k < kNumJoints; ++k)
        js.joints[k] = Keypoint{ux(rng), uy(rng), 0.8};
    pf.poses[0] = js;

    const std::vector<HOIRecord> a = infer(img, df, pf, params);
    REQUIRE(a.size() == 4);  // one pair, four verbs
    for (const HOIRecord& r : a) {
        CHECK(r.image_id == "x");
        CHECK(r.t.object_class == 6);
        // boxes returned in the original frame
        CHECK(r.t.human.x1 == doctest::Approx(5.0));
        CHECK(r.t.object.x2 == doctest::Approx(70.0));
        CHECK(r.t.score > 0.0);
    }

    InferOptions opt4;
    opt4.threads = 4;
    const std::vector<HOIRecord> b = infer(img, df, pf, params, opt4);
    REQUIRE(b.size() == a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].t.verb == b[i].t.verb);
        CHECK(a[i].t.score == b[i].t.score);  // bitwise equal
    }

    // person without a pose entry is an error
    PoseFile none;
    CHECK_THROWS_AS(infer(img, df, none, params), ParseError);
}
