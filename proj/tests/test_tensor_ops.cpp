#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "test_util.hpp"
#include "volshift/common.hpp"
#include "volshift/conv.hpp"
#include "volshift/ops.hpp"

using namespace volshift;
using vstest::random_tensor;

TEST_CASE("conv3d identity kernel") {
    Rng rng(11);
    auto x = random_tensor<float>({1, 1, 3, 3, 3}, rng);
    auto w = Tensor::full({1, 1, 1, 1, 1}, 1.0f);
    auto b = Tensor::zeros({1});
    TapeF tape(false);
    auto y = conv3d(tape, x, w, b, 1, PadSpec::zero(0));
    REQUIRE(y.shape() == x.shape());
    for (int64_t i = 0; i < x.numel(); ++i) CHECK(y.data()[i] == x.data()[i]);
}

TEST_CASE("conv3d all-ones sums the window") {
    auto x = Tensor::full({1, 1, 3, 3, 3}, 1.0f);
    auto w = Tensor::full({1, 1, 3, 3, 3}, 1.0f);
    auto b = Tensor::zeros({1});
    TapeF tape(false);
    auto y = conv3d(tape, x, w, b, 1, PadSpec::zero(0));
    REQUIRE(y.shape() == Shape{1, 1, 1, 1, 1});
    CHECK(y.item() == doctest::Approx(27.0f));
}

TEST_CASE("conv3d matches the direct loop oracle") {
    Rng rng(7);
    auto x = random_tensor<float>({2, 2, 5, 5, 5}, rng);
    auto w = random_tensor<float>({3, 2, 3, 3, 3}, rng);
    auto b = random_tensor<float>({3}, rng);
    TapeF tape(false);
    auto y = conv3d(tape, x, w, b, 2, PadSpec::zero(1));
    Shape oracle_shape;
    auto oracle = vstest::naive_conv3d(x, w, b, 2, 1, oracle_shape);
    REQUIRE(y.shape() == oracle_shape);
    for (int64_t i = 0; i < y.numel(); ++i) CHECK(std::fabs(double(y.data()[i]) - oracle[size_t(i)]) <= 1e-5);
}

TEST_CASE("conv3d reflect padding matches pad-then-convolve oracle") {
    Rng rng(13);
    auto x = random_tensor<float>({1, 2, 4, 4, 4}, rng);
    auto w = random_tensor<float>({2, 2, 3, 3, 3}, rng);
    auto b = random_tensor<float>({2}, rng);
    TapeF tape(false);
    auto y = conv3d(tape, x, w, b, 1, PadSpec::reflect(1));
    auto xp = reflection_pad3d(tape, x, 1);
    Shape oracle_shape;
    auto oracle = vstest::naive_conv3d(xp, w, b, 1, 0, oracle_shape);
    REQUIRE(y.shape() == oracle_shape);
    for (int64_t i = 0; i < y.numel(); ++i) CHECK(std::fabs(double(y.data()[i]) - oracle[size_t(i)]) <= 1e-5);
}

TEST_CASE("conv3d names the offending axis on mismatch") {
    auto x = Tensor::zeros({1, 3, 4, 4, 4});
    auto w = Tensor::zeros({2, 2, 3, 3, 3});
    auto b = Tensor::zeros({2});
    TapeF tape(false);
    CHECK_THROWS_WITH_AS(conv3d(tape, x, w, b, 1, PadSpec::zero(0)),
                         doctest::Contains("channel axis"), ShapeError);
    auto small = Tensor::zeros({1, 2, 2, 2, 2});
    CHECK_THROWS_AS(conv3d(tape, small, w, b, 1, PadSpec::zero(0)), ShapeError);
}

TEST_CASE("conv_transpose3d single-tap scatter") {
    auto x = Tensor::full({1, 1, 1, 1, 1}, 4.5f);
    auto w = Tensor::full({1, 1, 2, 2, 2}, 1.0f);
    auto b = Tensor::zeros({1});
    TapeF tape(false);
    auto y = conv_transpose3d(tape, x, w, b, 2);
    REQUIRE(y.shape() == Shape{1, 1, 2, 2, 2});
    for (int64_t i = 0; i < y.numel(); ++i) CHECK(y.data()[i] == doctest::Approx(4.5f));
}

TEST_CASE("conv_transpose3d identity kernel") {
    Rng rng(3);
    auto x = random_tensor<float>({1, 2, 3, 3, 3}, rng);
    auto w = Tensor::zeros({2, 2, 1, 1, 1});
    w.data()[0] = 1.0f;  // ci=0 -> co=0
    w.data()[3] = 1.0f;  // ci=1 -> co=1
    auto b = Tensor::zeros({2});
    TapeF tape(false);
    auto y = conv_transpose3d(tape, x, w, b, 1);
    REQUIRE(y.shape() == x.shape());
    for (int64_t i = 0; i < x.numel(); ++i) CHECK(y.data()[i] == x.data()[i]);
}

TEST_CASE("conv_transpose3d matches the scatter-add oracle") {
    Rng rng(21);
    auto x = random_tensor<float>({1, 2, 3, 3, 3}, rng);
    auto w = random_tensor<float>({2, 1, 3, 3, 3}, rng);
    auto b = random_tensor<float>({1}, rng);
    TapeF tape(false);
    auto y = conv_transpose3d(tape, x, w, b, 2);
    Shape oracle_shape;
    auto oracle = vstest::naive_conv_transpose3d(x, w, b, 2, oracle_shape);
    REQUIRE(y.shape() == oracle_shape);
    for (int64_t i = 0; i < y.numel(); ++i) CHECK(std::fabs(double(y.data()[i]) - oracle[size_t(i)]) <= 1e-5);
}

TEST_CASE("conv3d_same reproduces ceil(in/stride) extents") {
    Rng rng(5);
    auto x = random_tensor<float>({1, 1, 7, 7, 7}, rng);
    auto w = random_tensor<float>({1, 1, 4, 4, 4}, rng);
    auto b = Tensor::zeros({1});
    TapeF tape(false);
    auto y = conv3d_same(tape, x, w, b, 2);
    CHECK(y.shape() == Shape{1, 1, 4, 4, 4});
    auto y2 = conv3d_same(tape, x, w, b, 1);
    CHECK(y2.shape() == Shape{1, 1, 7, 7, 7});
}

TEST_CASE("upsample_nearest3d") {
    SUBCASE("factor 1 is identity") {
        Rng rng(2);
        auto x = random_tensor<float>({1, 1, 2, 2, 2}, rng);
        TapeF tape(false);
        auto y = upsample_nearest3d(tape, x, 1);
        CHECK(y.same_as(x));
    }
    SUBCASE("single voxel replication") {
        auto x = Tensor::full({1, 1, 1, 1, 1}, 7.0f);
        TapeF tape(false);
        auto y = upsample_nearest3d(tape, x, 2);
        REQUIRE(y.shape() == Shape{1, 1, 2, 2, 2});
        for (int64_t i = 0; i < y.numel(); ++i) CHECK(y.data()[i] == doctest::Approx(7.0f));
    }
    SUBCASE("index-map oracle") {
        Rng rng(9);
        auto x = random_tensor<float>({1, 1, 2, 2, 2}, rng);
        TapeF tape(false);
        auto y = upsample_nearest3d(tape, x, 3);
        REQUIRE(y.shape() == Shape{1, 1, 6, 6, 6});
        for (int64_t z = 0; z < 6; ++z)
            for (int64_t yy = 0; yy < 6; ++yy)
                for (int64_t xx = 0; xx < 6; ++xx) {
                    float expect = x.data()[(z / 3) * 4 + (yy / 3) * 2 + xx / 3];
                    CHECK(y.data()[(z * 6 + yy) * 6 + xx] == expect);
                }
    }
}

TEST_CASE("reflection_pad3d") {
    SUBCASE("n=0 identity") {
        Rng rng(4);
        auto x = random_tensor<float>({1, 1, 2, 2, 2}, rng);
        TapeF tape(false);
        CHECK(reflection_pad3d(tape, x, 0).same_as(x));
    }
    SUBCASE("1D definition of reflect") {
        TapeF tape(false);
        // rows of a padded volume read [b,a,b,c,b] for interior slices
        auto x3 = Tensor::zeros({1, 1, 3, 3, 3});
        for (int64_t z = 0; z < 3; ++z)
            for (int64_t yy = 0; yy < 3; ++yy)
                for (int64_t xx = 0; xx < 3; ++xx) x3.data()[(z * 3 + yy) * 3 + xx] = float(xx + 1);
        auto p = reflection_pad3d(tape, x3, 1);
        REQUIRE(p.shape() == Shape{1, 1, 5, 5, 5});
        // central row along width must read [b,a,b,c,b] = [2,1,2,3,2]
        const float expect[5] = {2, 1, 2, 3, 2};
        for (int64_t xx = 0; xx < 5; ++xx) CHECK(p.data()[(2 * 5 + 2) * 5 + xx] == doctest::Approx(expect[xx]));
    }
    SUBCASE("index-mirroring oracle, n=2 on 4^3") {
        Rng rng(6);
        auto x = random_tensor<float>({1, 1, 4, 4, 4}, rng);
        TapeF tape(false);
        auto y = reflection_pad3d(tape, x, 2);
        REQUIRE(y.shape() == Shape{1, 1, 8, 8, 8});
        auto mirror = [](int64_t o) {
            int64_t i = o - 2;
            if (i < 0) i = -i;
            if (i >= 4) i = 6 - i;
            return i;
        };
        for (int64_t z = 0; z < 8; ++z)
            for (int64_t yy = 0; yy < 8; ++yy)
                for (int64_t xx = 0; xx < 8; ++xx)
                    CHECK(y.data()[(z * 8 + yy) * 8 + xx] ==
                          x.data()[(mirror(z) * 4 + mirror(yy)) * 4 + mirror(xx)]);
    }
    SUBCASE("pad >= extent errors") {
        auto x = Tensor::zeros({1, 1, 3, 3, 3});
        TapeF tape(false);
        CHECK_THROWS_AS(reflection_pad3d(tape, x, 3), ShapeError);
    }
}

TEST_CASE("instance_norm3d") {
    TapeF tape(false);
    SUBCASE("constant input becomes zeros") {
        auto x = Tensor::full({1, 2, 2, 2, 2}, 3.25f);
        auto y = instance_norm3d(tape, x, 1e-5);
        for (int64_t i = 0; i < y.numel(); ++i) CHECK(std::fabs(y.data()[i]) <= 1e-4f);
    }
    SUBCASE("symmetric +-1 input") {
        auto x = Tensor::zeros({1, 1, 1, 1, 4});
        x.data()[0] = -1;
        x.data()[1] = 1;
        x.data()[2] = -1;
        x.data()[3] = 1;
        auto y = instance_norm3d(tape, x, 1e-5);
        float expect = float(1.0 / std::sqrt(1.0 + 1e-5));
        CHECK(y.data()[0] == doctest::Approx(-expect));
        CHECK(y.data()[1] == doctest::Approx(expect));
    }
    SUBCASE("moment recomputation oracle") {
        Rng rng(8);
        auto x = random_tensor<float>({2, 3, 4, 4, 4}, rng, -2.0, 5.0);
        auto y = instance_norm3d(tape, x, 1e-5);
        int64_t m = 64;
        for (int64_t g = 0; g < 6; ++g) {
            double mean = 0, var = 0;
            for (int64_t i = 0; i < m; ++i) mean += double(y.data()[g * m + i]);
            mean /= double(m);
            for (int64_t i = 0; i < m; ++i) {
                double d = double(y.data()[g * m + i]) - mean;
                var += d * d;
            }
            var /= double(m);
            CHECK(std::fabs(mean) < 1e-6);
            CHECK(std::fabs(var - 1.0) < 1e-3);
        }
    }
    SUBCASE("tiny spatial volume rejected") {
        auto x = Tensor::zeros({1, 1, 1, 1, 1});
        CHECK_THROWS_AS(instance_norm3d(tape, x, 1e-5), ShapeError);
    }
}

TEST_CASE("activations") {
    TapeF tape(false);
    auto x = Tensor::from_data({1, 1, 1, 1, 3}, {-2.0f, 0.0f, 3.0f});
    auto r = relu(tape, x);
    CHECK(r.data()[0] == 0.0f);
    CHECK(r.data()[2] == 3.0f);
    auto l = leaky_relu(tape, x, 0.2);
    CHECK(l.data()[0] == doctest::Approx(-0.4f));
    CHECK(l.data()[2] == doctest::Approx(3.0f));
    auto s = sigmoid(tape, x);
    CHECK(s.data()[1] == doctest::Approx(0.5f));
}

TEST_CASE("softmax_channels") {
    TapeF tape(false);
    SUBCASE("equal logits") {
        auto x = Tensor::full({1, 2, 1, 1, 1}, 1.75f);
        auto y = softmax_channels(tape, x);
        CHECK(y.data()[0] == doctest::Approx(0.5f));
        CHECK(y.data()[1] == doctest::Approx(0.5f));
    }
    SUBCASE("no overflow at extreme logits") {
        auto x = Tensor::from_data({1, 2, 1, 1, 1}, {1000.0f, 0.0f});
        auto y = softmax_channels(tape, x);
        CHECK(std::isfinite(y.data()[0]));
        CHECK(y.data()[0] == doctest::Approx(1.0f));
        CHECK(y.data()[1] == doctest::Approx(0.0f));
    }
    SUBCASE("matches the direct exp/sum oracle and sums to one") {
        Rng rng(12);
        auto x = random_tensor<float>({2, 3, 2, 2, 2}, rng, -3.0, 3.0);
        auto y = softmax_channels(tape, x);
        int64_t m = 8;
        for (int64_t b = 0; b < 2; ++b)
            for (int64_t v = 0; v < m; ++v) {
                double s = 0, total = 0;
                for (int64_t c = 0; c < 3; ++c) s += std::exp(double(x.data()[(b * 3 + c) * m + v]));
                for (int64_t c = 0; c < 3; ++c) {
                    double expect = std::exp(double(x.data()[(b * 3 + c) * m + v])) / s;
                    total += double(y.data()[(b * 3 + c) * m + v]);
                    CHECK(std::fabs(double(y.data()[(b * 3 + c) * m + v]) - expect) <= 1e-6);
                }
                CHECK(std::fabs(total - 1.0) <= 1e-6);
            }
    }
    SUBCASE("channel sums stay at one for magnitude-1e4 logits") {
        Rng rng(14);
        auto x = random_tensor<float>({1, 3, 2, 2, 2}, rng, -1e4, 1e4);
        auto y = softmax_channels(tape, x);
        for (int64_t v = 0; v < 8; ++v) {
            double s = 0;
            for (int64_t c = 0; c < 3; ++c) s += double(y.data()[c * 8 + v]);
            CHECK(std::fabs(s - 1.0) <= 1e-6);
        }
    }
}

TEST_CASE("maxpool3d") {
    TapeF tape(false);
    SUBCASE("size 1 identity") {
        Rng rng(1);
        auto x = random_tensor<float>({1, 1, 2, 2, 2}, rng);
        CHECK(maxpool3d(tape, x, 1).same_as(x));
    }
    SUBCASE("2^3 block maximum") {
        std::vector<float> vals(8);
        for (int i = 0; i < 8; ++i) vals[size_t(i)] = float(i);
        auto x = Tensor::from_data({1, 1, 2, 2, 2}, vals);
        auto y = maxpool3d(tape, x, 2);
        REQUIRE(y.shape() == Shape{1, 1, 1, 1, 1});
        CHECK(y.item() == doctest::Approx(7.0f));
    }
    SUBCASE("loop oracle on 4^3") {
        Rng rng(17);
        auto x = random_tensor<float>({1, 1, 4, 4, 4}, rng);
        auto y = maxpool3d(tape, x, 2);
        for (int64_t oz = 0; oz < 2; ++oz)
            for (int64_t oy = 0; oy < 2; ++oy)
                for (int64_t ox = 0; ox < 2; ++ox) {
                    float best = -1e30f;
                    for (int64_t kz = 0; kz < 2; ++kz)
                        for (int64_t ky = 0; ky < 2; ++ky)
                            for (int64_t kx = 0; kx < 2; ++kx)
                                best = std::max(best, x.data()[((oz * 2 + kz) * 4 + oy * 2 + ky) * 4 + ox * 2 + kx]);
                    CHECK(y.data()[(oz * 2 + oy) * 2 + ox] == best);
                }
    }
    SUBCASE("indivisible extent rejected") {
        auto x = Tensor::zeros({1, 1, 3, 4, 4});
        CHECK_THROWS_AS(maxpool3d(tape, x, 2), ShapeError);
    }
}

TEST_CASE("losses") {
    TapeF tape(false);
    Rng rng(19);
    SUBCASE("l1 of identical tensors is zero") {
        auto x = random_tensor<float>({1, 2, 3, 3, 3}, rng);
        CHECK(l1_loss(tape, x, x).item() == 0.0f);
    }
    SUBCASE("bce at p=0.5 is ln 2") {
        auto p = Tensor::full({1, 1, 2, 2, 2}, 0.5f);
        auto t = random_tensor<float>({1, 1, 2, 2, 2}, rng, 0.0, 1.0);
        CHECK(bce_loss(tape, p, t).item() == doctest::Approx(std::log(2.0)).epsilon(1e-6));
    }
    SUBCASE("cross entropy of perfect prediction is zero") {
        auto p = Tensor::zeros({1, 2, 2, 2, 2});
        std::vector<int32_t> labels(8, 1);
        for (int64_t v = 0; v < 8; ++v) p.data()[8 + v] = 1.0f;  // channel 1 = 1
        CHECK(cross_entropy_loss(tape, p, labels).item() == doctest::Approx(0.0f));
    }
    SUBCASE("bce mismatched shapes rejected") {
        auto a = Tensor::zeros({1, 1, 2, 2, 2});
        auto b = Tensor::zeros({1, 1, 2, 2, 4});
        CHECK_THROWS_AS(bce_loss(tape, a, b), ShapeError);
    }
    SUBCASE("losses dispatch") {
        auto x = random_tensor<float>({1, 1, 2, 2, 2}, rng, 0.2, 0.8);
        auto y = random_tensor<float>({1, 1, 2, 2, 2}, rng, 0.2, 0.8);
        CHECK(losses(tape, x, y, LossKind::L1).item() == l1_loss(tape, x, y).item());
        CHECK(losses(tape, x, y, LossKind::Bce).item() == bce_loss(tape, x, y).item());
    }
}

TEST_CASE("forward determinism across runs and thread counts") {
    auto run = [](int threads) {
        set_thread_count(threads);
        Rng rng(42);
        auto x = random_tensor<float>({2, 2, 8, 8, 8}, rng, -1.0, 1.0, true);
        auto w = random_tensor<float>({4, 2, 3, 3, 3}, rng, -0.5, 0.5, true);
        auto b = random_tensor<float>({4}, rng, -0.1, 0.1, true);
        TapeF tape;
        auto y = conv3d(tape, x, w, b, 2, PadSpec::zero(1));
        auto n = instance_norm3d(tape, y, 1e-5);
        auto a = leaky_relu(tape, n, 0.2);
        auto loss = sum(tape, a);
        tape.backward(loss);
        std::vector<float> out = y.values();
        out.insert(out.end(), x.grad_ref().begin(), x.grad_ref().end());
        out.insert(out.end(), w.grad_ref().begin(), w.grad_ref().end());
        out.insert(out.end(), b.grad_ref().begin(), b.grad_ref().end());
        set_thread_count(1);
        return out;
    };
    auto r1 = run(1);
    auto r1b = run(1);
    auto r4 = run(4);
    REQUIRE(r1.size() == r1b.size());
    REQUIRE(r1.size() == r4.size());
    for (size_t i = 0; i < r1.size(); ++i) {
        CHECK(r1[i] == r1b[i]);
        CHECK(r1[i] == r4[i]);
    }
}

TEST_CASE("forward ops keep finite data finite") {
    Rng rng(33);
    auto x = random_tensor<float>({1, 2, 8, 8, 8}, rng, -10.0, 10.0);
    auto w = random_tensor<float>({2, 2, 3, 3, 3}, rng, -1.0, 1.0);
    auto b = random_tensor<float>({2}, rng);
    TapeF tape(false);
    auto y = conv3d(tape, x, w, b, 1, PadSpec::reflect(1));
    y = instance_norm3d(tape, y, 1e-5);
    y = sigmoid(tape, y);
    y = softmax_channels(tape, y);
    for (int64_t i = 0; i < y.numel(); ++i) CHECK(std::isfinite(y.data()[i]));
}
