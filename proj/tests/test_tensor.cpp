#include <doctest.h>

#include <cmath>
#include <random>

#include "viplo/tensor.hpp"

using namespace viplo;

namespace {

Tensor from(std::vector<std::size_t> shape, std::vector<float> vals) {
    Tensor t(std::move(shape));
    t.data = std::move(vals);
    return t;
}

std::mt19937_64 rng(12345);

Tensor random_tensor(std::vector<std::size_t> shape, double scale = 1.0) {
    Tensor t(std::move(shape));
    std::normal_distribution<double> d(0.0, scale);
    for (float& v : t.data) v = static_cast<float>(d(rng));
    return t;
}

}  // namespace

TEST_CASE("matmul identity and hand cases") {
    const Tensor eye = from({2, 2}, {1, 0, 0, 1});
    const Tensor a = from({2, 2}, {3, -1, 2, 5});
    const Tensor r = matmul(eye, a);
    for (std::size_t i = 0; i < 4; ++i) CHECK(r.data[i] == a.data[i]);

    const Tensor b = from({2, 2}, {1, 2, 3, 4});
    const Tensor c = from({2, 1}, {0, 1});
    const Tensor p = matmul(b, c);
    CHECK(p.at(0, 0) == doctest::Approx(2));
    CHECK(p.at(1, 0) == doctest::Approx(4));

    CHECK_THROWS_AS(matmul(from({2, 3}, {0, 0, 0, 0, 0, 0}), b), DimensionError);
}

TEST_CASE("matmul matches triple-loop oracle") {
    const Tensor a = random_tensor({8, 8});
    const Tensor b = random_tensor({8, 8});
    const Tensor r = matmul(a, b);
    for (std::size_t i = 0; i < 8; ++i) {
        for (std::size_t j = 0; j < 8; ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < 8; ++k)
                acc += static_cast<double>(a.at(i, k)) * static_cast<double>(b.at(k, j));
            CHECK(std::abs(r.at(i, j) - acc) < 1e-6);
        }
    }
}

TEST_CASE("masked_softmax basics") {
    const Tensor uniform = masked_softmax(from({3}, {0, 0, 0}), Tensor({3}));
    for (int i = 0; i < 3; ++i) CHECK(uniform.data[i] == doctest::Approx(1.0 / 3));

    const float ninf = -std::numeric_limits<float>::infinity();
    const Tensor full = masked_softmax(from({2}, {5, 5}), from({2}, {0, ninf}));
    CHECK(full.data[0] == 1.0f);
    CHECK(full.data[1] == 0.0f);

    // log-bias case against direct exponentiation
    const Tensor r = masked_softmax(from({3}, {1, 2, 3}),
                                    from({3}, {std::log(0.5f), 0, 0}));
    const double e1 = 0.5 * std::exp(1.0), e2 = std::exp(2.0), e3 = std::exp(3.0);
    const double z = e1 + e2 + e3;
    CHECK(std::abs(r.data[0] - e1 / z) < 1e-6);
    CHECK(std::abs(r.data[1] - e2 / z) < 1e-6);
    CHECK(std::abs(r.data[2] - e3 / z) < 1e-6);

    CHECK_THROWS_AS(masked_softmax(from({2}, {0, 0}), from({2}, {ninf, ninf})),
                    DegenerateInputError);
}

TEST_CASE("masked_softmax properties: rows sum to one, shift invariance") {
    for (int rep = 0; rep < 50; ++rep) {
        Tensor logits = random_tensor({4, 6}, 3.0);
        Tensor bias({4, 6});
        // mask a couple of positions per row, keep at least one open
        std::uniform_int_distribution<int> pick(0, 5);
        for (std::size_t r = 0; r < 4; ++r)
            bias.at(r, static_cast<std::size_t>(pick(rng))) =
                -std::numeric_limits<float>::infinity();
        const Tensor s = masked_softmax(logits, bias);
        for (std::size_t r = 0; r < 4; ++r) {
            double sum = 0.0;
            for (std::size_t j = 0; j < 6; ++j) {
                CHECK(s.at(r, j) >= 0.0f);
                sum += s.at(r, j);
            }
            CHECK(std::abs(sum - 1.0) < 1e-6);
        }
        Tensor shifted = logits;
        for (float& v : shifted.data) v += 2.5f;
        const Tensor s2 = masked_softmax(shifted, bias);
        for (std::size_t i = 0; i < s.size(); ++i)
            CHECK(std::abs(s.data[i] - s2.data[i]) < 1e-6);
    }
}

TEST_CASE("layer_norm") {
    Tensor gain({4}), shift({4});
    std::fill(gain.data.begin(), gain.data.end(), 1.0f);

    const Tensor constant = from({4}, {3, 3, 3, 3});
    const Tensor z = layer_norm(constant, gain, shift);
    for (float v : z.data) CHECK(std::abs(v) < 1e-4);

    Tensor zero_gain({4});
    Tensor some_shift = from({4}, {1, -2, 0.5, 7});
    const Tensor s = layer_norm(random_tensor({4}), zero_gain, some_shift);
    for (std::size_t i = 0; i < 4; ++i) CHECK(s.data[i] == some_shift.data[i]);

    // two-pass oracle
    const Tensor x = random_tensor({8});
    Tensor g8 = random_tensor({8});
    Tensor b8 = random_tensor({8});
    const Tensor out = layer_norm(x, g8, b8);
    double mean = 0.0;
    for (float v : x.data) mean += v;
    mean /= 8.0;
    double var = 0.0;
    for (float v : x.data) var += (v - mean) * (v - mean);
    var /= 8.0;
    for (std::size_t i = 0; i < 8; ++i) {
        const double want =
            g8.data[i] * (x.data[i] - mean) / std::sqrt(var + 1e-5) + b8.data[i];
        CHECK(std::abs(out.data[i] - want) < 1e-6);
    }
}

TEST_CASE("bilinear_sample") {
    Tensor map({3, 3, 1});
    for (std::size_t i = 0; i < 9; ++i) map.data[i] = static_cast<float>(i);

    CHECK(bilinear_sample(map, 2.0, 1.0).data[0] == doctest::Approx(5.0));
    CHECK(bilinear_sample(map, 0.5, 0.0).data[0] == doctest::Approx(0.5));

    // 4-term oracle on a random map and point
    const Tensor m4 = random_tensor({4, 4, 2});
    const double x = 1.37, y = 2.61;
    const Tensor v = bilinear_sample(m4, x, y);
    const double fx = x - 1, fy = y - 2;
    for (std::size_t c = 0; c < 2; ++c) {
        const double want = (1 - fy) * ((1 - fx) * m4.at(2, 1, c) + fx * m4.at(2, 2, c)) +
                            fy * ((1 - fx) * m4.at(3, 1, c) + fx * m4.at(3, 2, c));
        CHECK(std::abs(v.data[c] - want) < 1e-6);
    }

    // clamped outside the map
    CHECK(bilinear_sample(map, -5.0, -5.0).data[0] == doctest::Approx(0.0));
    CHECK(bilinear_sample(map, 99.0, 99.0).data[0] == doctest::Approx(8.0));

    // linear along a cell edge
    for (double f : {0.25, 0.5, 0.75})
        CHECK(bilinear_sample(map, f, 0.0).data[0] == doctest::Approx(f));
}

TEST_CASE("mlp_forward") {
    MlpSpec zero;
    zero.weights.push_back(Tensor({3, 2}));
    zero.biases.push_back(Tensor({2}));
    const Tensor z = mlp_forward(zero, random_tensor({3}));
    CHECK(z.data[0] == 0.0f);
    CHECK(z.data[1] == 0.0f);

    MlpSpec ident;
    ident.weights.push_back(from({2, 2}, {1, 0, 0, 1}));
    ident.biases.push_back(Tensor({2}));
    const Tensor x = from({2}, {3.5f, -1.25f});
    const Tensor y = mlp_forward(ident, x);
    CHECK(y.data[0] == x.data[0]);
    CHECK(y.data[1] == x.data[1]);

    // two-layer loop oracle
    MlpSpec two;
    two.weights.push_back(random_tensor({3, 4}));
    two.biases.push_back(random_tensor({4}));
    two.weights.push_back(random_tensor({4, 2}));
    two.biases.push_back(random_tensor({2}));
    const Tensor in = random_tensor({3});
    const Tensor out = mlp_forward(two, in);
    double hidden[4];
    for (int j = 0; j < 4; ++j) {
        double acc = two.biases[0].data[j];
        for (int i = 0; i < 3; ++i) acc += in.data[i] * two.weights[0].at(i, j);
        hidden[j] = gelu(acc);
    }
    for (int j = 0; j < 2; ++j) {
        double acc = two.biases[1].data[j];
        for (int i = 0; i < 4; ++i)
            acc += static_cast<float>(hidden[i]) * two.weights[1].at(i, j);
        CHECK(std::abs(out.data[j] - acc) < 1e-5);
    }

    CHECK_THROWS_AS(mlp_forward(two, random_tensor({5})), DimensionError);
}
