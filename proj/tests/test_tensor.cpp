#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "lvd/rng.hpp"
#include "lvd/tensor.hpp"
#include "testutil.hpp"

using namespace lvd;
using lvdtest::fd_check;

namespace {

Tensor randn_param(const Shape& s, RngStream& rng, double stddev = 1.0) {
    return Tensor::param(s, Tensor::randn(s, rng, stddev).vec());
}

// explicit exp/normalize loops, independent of the fused attention path
Tensor naive_attention(const Tensor& q, const Tensor& k, const Tensor& v) {
    int64_t n = q.dim(0), m = k.dim(0), d = q.dim(1);
    double scale = 1.0 / std::sqrt(static_cast<double>(d));
    Tensor out = Tensor::zeros({n, d});
    for (int64_t i = 0; i < n; ++i) {
        std::vector<double> row(m);
        double denom = 0.0;
        for (int64_t j = 0; j < m; ++j) {
            double s = 0.0;
            for (int64_t c = 0; c < d; ++c) s += q.data()[i * d + c] * k.data()[j * d + c];
            row[j] = std::exp(s * scale);
            denom += row[j];
        }
        for (int64_t j = 0; j < m; ++j)
            for (int64_t c = 0; c < d; ++c)
                out.data()[i * d + c] += row[j] / denom * v.data()[j * d + c];
    }
    return out;
}

}  // namespace

TEST_CASE("matmul against naive loops") {
    RngStream rng(1);
    Tensor a = Tensor::randn({3, 4}, rng);
    Tensor b = Tensor::randn({4, 5}, rng);
    Tensor c = matmul(a, b);
    for (int64_t i = 0; i < 3; ++i)
        for (int64_t j = 0; j < 5; ++j) {
            double want = 0;
            for (int64_t p = 0; p < 4; ++p) want += a.data()[i * 4 + p] * b.data()[p * 5 + j];
            CHECK(c.data()[i * 5 + j] == doctest::Approx(want).epsilon(1e-12));
        }
    CHECK_THROWS_AS(matmul(a, a), std::invalid_argument);
}

TEST_CASE("attention on a single key returns that value row") {
    RngStream rng(2);
    Tensor q = Tensor::randn({5, 3}, rng);
    Tensor k = Tensor::randn({1, 3}, rng);
    Tensor v = Tensor::randn({1, 3}, rng);
    Tensor out = attention(q, k, v);
    for (int64_t i = 0; i < 5; ++i)
        for (int64_t c = 0; c < 3; ++c)
            CHECK(out.data()[i * 3 + c] == doctest::Approx(v.data()[c]).epsilon(1e-12));
}

TEST_CASE("attention with zero scores averages the values") {
    RngStream rng(3);
    Tensor q = Tensor::zeros({2, 3});
    Tensor k = Tensor::randn({4, 3}, rng);
    Tensor v = Tensor::randn({4, 3}, rng);
    Tensor out = attention(q, k, v);
    for (int64_t c = 0; c < 3; ++c) {
        double want = 0;
        for (int64_t j = 0; j < 4; ++j) want += v.data()[j * 3 + c] / 4.0;
        CHECK(out.data()[c] == doctest::Approx(want).epsilon(1e-12));
        CHECK(out.data()[3 + c] == doctest::Approx(want).epsilon(1e-12));
    }
}

TEST_CASE("attention matches the naive-loop oracle") {
    RngStream rng(4);
    for (int rep = 0; rep < 20; ++rep) {
        Tensor q = Tensor::randn({2, 3}, rng);
        Tensor k = Tensor::randn({4, 3}, rng);
        Tensor v = Tensor::randn({4, 3}, rng);
        Tensor got = attention(q, k, v);
        Tensor want = naive_attention(q, k, v);
        CHECK(lvdtest::max_abs_diff(got, want) < 1e-6);
    }
}

TEST_CASE("multihead attention reduces to per-head naive attention") {
    RngStream rng(5);
    int heads = 2, dh = 3;
    Tensor q = Tensor::randn({1, 4, heads * dh}, rng);
    Tensor k = Tensor::randn({1, 5, heads * dh}, rng);
    Tensor v = Tensor::randn({1, 5, heads * dh}, rng);
    Tensor got = multihead_attention(q, k, v, heads);
    for (int h = 0; h < heads; ++h) {
        Tensor qh = Tensor::zeros({4, dh}), kh = Tensor::zeros({5, dh}),
               vh = Tensor::zeros({5, dh});
        for (int64_t i = 0; i < 4; ++i)
            for (int64_t c = 0; c < dh; ++c)
                qh.data()[i * dh + c] = q.data()[i * heads * dh + h * dh + c];
        for (int64_t i = 0; i < 5; ++i)
            for (int64_t c = 0; c < dh; ++c) {
                kh.data()[i * dh + c] = k.data()[i * heads * dh + h * dh + c];
                vh.data()[i * dh + c] = v.data()[i * heads * dh + h * dh + c];
            }
        Tensor want = naive_attention(qh, kh, vh);
        for (int64_t i = 0; i < 4; ++i)
            for (int64_t c = 0; c < dh; ++c)
                CHECK(got.data()[i * heads * dh + h * dh + c] ==
                      doctest::Approx(want.data()[i * dh + c]).epsilon(1e-9));
    }
}

TEST_CASE("conv2d against naive loops") {
    RngStream rng(6);
    Tensor x = Tensor::randn({2, 3, 5, 4}, rng);
    Tensor w = Tensor::randn({4, 3, 3, 3}, rng);
    Tensor b = Tensor::randn({4}, rng);
    for (int stride : {1, 2}) {
        Tensor y = conv2d(x, w, b, stride, 1);
        int64_t OH = (5 + 2 - 3) / stride + 1, OW = (4 + 2 - 3) / stride + 1;
        REQUIRE(y.shape() == Shape{2, 4, OH, OW});
        for (int64_t n = 0; n < 2; ++n)
            for (int64_t oc = 0; oc < 4; ++oc)
                for (int64_t oy = 0; oy < OH; ++oy)
                    for (int64_t ox = 0; ox < OW; ++ox) {
                        double want = b.data()[oc];
                        for (int64_t ic = 0; ic < 3; ++ic)
                            for (int64_t ky = 0; ky < 3; ++ky)
                                for (int64_t kx = 0; kx < 3; ++kx) {
                                    int64_t iy = oy * stride + ky - 1;
                                    int64_t ix = ox * stride + kx - 1;
                                    if (iy < 0 || iy >= 5 || ix < 0 || ix >= 4) continue;
                                    want += w.data()[((oc * 3 + ic) * 3 + ky) * 3 + kx] *
                                            x.data()[((n * 3 + ic) * 5 + iy) * 4 + ix];
                                }
                        CHECK(y.data()[((n * 4 + oc) * OH + oy) * OW + ox] ==
                              doctest::Approx(want).epsilon(1e-12));
                    }
    }
}

TEST_CASE("group_norm normalizes per group") {
    RngStream rng(7);
    Tensor x = Tensor::randn({2, 8, 3, 3}, rng, 2.5);
    Tensor gamma = Tensor::param({8}, std::vector<double>(8, 1.0));
    Tensor beta = Tensor::param({8}, std::vector<double>(8, 0.0));
    Tensor y = group_norm(x, gamma, beta, 4);
    int64_t cpg = 2, hw = 9, m = cpg * hw;
    for (int64_t n = 0; n < 2; ++n)
        for (int64_t g = 0; g < 4; ++g) {
            double mean = 0, var = 0;
            const double* base = y.data() + (n * 8 + g * cpg) * hw;
            for (int64_t i = 0; i < m; ++i) mean += base[i];
            mean /= m;
            for (int64_t i = 0; i < m; ++i) var += (base[i] - mean) * (base[i] - mean);
            var /= m;
            CHECK(std::abs(mean) < 1e-10);
            CHECK(var == doctest::Approx(1.0).epsilon(1e-3));
        }
}

TEST_CASE("finite-difference gradients for core ops") {
    RngStream rng(42);

    SUBCASE("linear") {
        Tensor x = randn_param({3, 4}, rng);
        Tensor w = randn_param({4, 5}, rng);
        Tensor b = randn_param({5}, rng);
        auto f = [&] { return mean(silu(linear(x, w, b))); };
        CHECK(fd_check(x, f) < 1e-6);
        CHECK(fd_check(w, f) < 1e-6);
        CHECK(fd_check(b, f) < 1e-6);
    }
    SUBCASE("conv2d stride 1") {
        Tensor x = randn_param({2, 2, 4, 4}, rng);
        Tensor w = randn_param({3, 2, 3, 3}, rng);
        Tensor b = randn_param({3}, rng);
        auto f = [&] { return mse(conv2d(x, w, b, 1, 1), Tensor::zeros({2, 3, 4, 4})); };
        CHECK(fd_check(x, f) < 1e-6);
        CHECK(fd_check(w, f) < 1e-6);
        CHECK(fd_check(b, f) < 1e-6);
    }
    SUBCASE("conv2d stride 2 no pad") {
        Tensor x = randn_param({1, 2, 6, 6}, rng);
        Tensor w = randn_param({2, 2, 3, 3}, rng);
        Tensor b = randn_param({2}, rng);
        auto f = [&] { return mean(conv2d(x, w, b, 2, 0)); };
        CHECK(fd_check(x, f) < 1e-6);
        CHECK(fd_check(w, f) < 1e-6);
    }
    SUBCASE("attention") {
        Tensor q = randn_param({2, 4, 6}, rng);
        Tensor k = randn_param({2, 5, 6}, rng);
        Tensor v = randn_param({2, 5, 6}, rng);
        Tensor tgt = Tensor::randn({2, 4, 6}, rng);
        auto f = [&] { return mse(multihead_attention(q, k, v, 2), tgt); };
        CHECK(fd_check(q, f) < 1e-6);
        CHECK(fd_check(k, f) < 1e-6);
        CHECK(fd_check(v, f) < 1e-6);
    }
    SUBCASE("group_norm") {
        Tensor x = randn_param({2, 4, 3, 3}, rng);
        Tensor gamma = randn_param({4}, rng);
        Tensor beta = randn_param({4}, rng);
        Tensor tgt = Tensor::randn({2, 4, 3, 3}, rng);
        auto f = [&] { return mse(group_norm(x, gamma, beta, 2), tgt); };
        CHECK(fd_check(x, f, 1e-5) < 1e-5);
        CHECK(fd_check(gamma, f) < 1e-6);
        CHECK(fd_check(beta, f) < 1e-6);
    }
    SUBCASE("layer_norm") {
        Tensor x = randn_param({3, 6}, rng);
        Tensor gamma = randn_param({6}, rng);
        Tensor beta = randn_param({6}, rng);
        Tensor tgt = Tensor::randn({3, 6}, rng);
        auto f = [&] { return mse(layer_norm(x, gamma, beta), tgt); };
        CHECK(fd_check(x, f, 1e-5) < 1e-5);
        CHECK(fd_check(gamma, f) < 1e-6);
    }
    SUBCASE("activations and elementwise") {
        Tensor x = randn_param({2, 5}, rng);
        Tensor y = randn_param({2, 5}, rng);
        CHECK(fd_check(x, [&] { return mean(gelu(x)); }) < 1e-6);
        CHECK(fd_check(x, [&] { return mean(silu(x)); }) < 1e-6);
        CHECK(fd_check(x, [&] { return mean(mul(x, y)); }) < 1e-6);
        CHECK(fd_check(y, [&] { return sum(sub(x, y)); }) < 1e-6);
        CHECK(fd_check(x, [&] { return mse(scale(x, 1.7), y); }) < 1e-6);
    }
    SUBCASE("shape ops") {
        Tensor x = randn_param({2, 3, 4}, rng);
        Tensor tgt = Tensor::randn({4, 2, 3}, rng);
        auto f = [&] { return mse(permute(x, {2, 0, 1}), tgt); };
        CHECK(fd_check(x, f) < 1e-6);
        auto g = [&] {
            Tensor a = slice(x, 1, 0, 2);
            Tensor b = slice(x, 1, 2, 1);
            return mean(concat({a, b, a}, 1));
        };
        CHECK(fd_check(x, g) < 1e-6);
        auto h = [&] { return mean(repeat_interleave0(reshape(x, {6, 4}), 3)); };
        CHECK(fd_check(x, h) < 1e-6);
    }
    SUBCASE("embedding and cross entropy") {
        Tensor table = randn_param({7, 4}, rng);
        std::vector<int64_t> ids{1, 3, 3, 0};
        std::vector<int64_t> labels{2, 0, 1, 3};
        auto f = [&] { return cross_entropy(embedding(table, ids), labels); };
        CHECK(fd_check(table, f) < 1e-6);
    }
    SUBCASE("broadcast helpers") {
        Tensor x = randn_param({2, 3, 2, 2}, rng);
        Tensor v = randn_param({2, 3}, rng);
        Tensor tgt = Tensor::randn({2, 3, 2, 2}, rng);
        auto f = [&] { return mse(add_channel_vec(x, v), tgt); };
        CHECK(fd_check(x, f) < 1e-6);
        CHECK(fd_check(v, f) < 1e-6);
        Tensor r = randn_param({4, 3}, rng);
        Tensor bias = randn_param({3}, rng);
        auto g = [&] { return mean(add_bias_rows(r, bias)); };
        CHECK(fd_check(bias, g) < 1e-6);
    }
    SUBCASE("upsample") {
        Tensor x = randn_param({1, 2, 3, 3}, rng);
        Tensor tgt = Tensor::randn({1, 2, 6, 6}, rng);
        auto f = [&] { return mse(upsample_nearest2x(x), tgt); };
        CHECK(fd_check(x, f) < 1e-6);
    }
    SUBCASE("video layout round trip") {
        Tensor v = randn_param({2, 3, 4, 2, 2}, rng);
        Tensor tgt = Tensor::randn({2, 3, 4, 2, 2}, rng);
        auto f = [&] {
            Tensor frames = video_to_frames(v);
            return mse(frames_to_video(frames, 2, 4), tgt);
        };
        CHECK(fd_check(v, f) < 1e-5);
        Tensor frames = video_to_frames(v);
        Tensor back = frames_to_video(frames, 2, 4);
        CHECK(lvdtest::bitwise_equal(back, v));
    }
}

TEST_CASE("gradient accumulation over shared subgraphs") {
    RngStream rng(9);
    Tensor x = randn_param({2, 2}, rng);
    auto f = [&] {
        Tensor y = mul(x, x);
        return add(sum(y), sum(y));  // same node consumed twice
    };
    CHECK(fd_check(x, f) < 1e-6);
}

TEST_CASE("NoGradGuard suppresses graph construction") {
    RngStream rng(10);
    Tensor x = randn_param({2, 2}, rng);
    NoGradGuard guard;
    Tensor y = mul(x, x);
    CHECK_FALSE(y.requires_grad());
}

TEST_CASE("video_to_frames layout") {
    // [B=1,C=2,F=2,H=1,W=2]: frame-major output rows, channels preserved
    Tensor v = Tensor::from_data({1, 2, 2, 1, 2}, {/*c0f0*/ 1, 2, /*c0f1*/ 3, 4,
                                                   /*c1f0*/ 5, 6, /*c1f1*/ 7, 8});
    Tensor f = video_to_frames(v);
    REQUIRE(f.shape() == Shape{2, 2, 1, 2});
    // frame 0: channels (1,2),(5,6); frame 1: (3,4),(7,8)
    std::vector<double> want{1, 2, 5, 6, 3, 4, 7, 8};
    for (size_t i = 0; i < want.size(); ++i) CHECK(f.data()[i] == want[i]);
}

TEST_CASE("randn is deterministic per seed") {
    RngStream a(123), b(123), c(124);
    Tensor ta = Tensor::randn({16}, a);
    Tensor tb = Tensor::randn({16}, b);
    Tensor tc = Tensor::randn({16}, c);
    CHECK(lvdtest::bitwise_equal(ta, tb));
    CHECK_FALSE(lvdtest::bitwise_equal(ta, tc));
}
