#include "stainfocus/autodiff.hpp"

#include "support.hpp"

#include <doctest.h>

using namespace stainfocus;
namespace ad = stainfocus::ad;

namespace {

Tensor randn(std::vector<int> shape, std::mt19937_64& rng, double scale = 1.0) {
    std::normal_distribution<double> n(0.0, scale);
    Tensor t(std::move(shape));
    for (auto& v : t.values()) v = n(rng);
    return t;
}

// Weighted sum with fixed random weights, so every output element matters.
ad::Var probe(const ad::Var& y, std::uint64_t seed = 99) {
    std::mt19937_64 rng(seed);
    return ad::sum_all(ad::mul(y, ad::constant(randn(y.shape(), rng))));
}

void expect_ok(const ParameterList& params, const std::function<ad::Var()>& f) {
    const auto r = sftest::check_gradients(params, f, 40);
    INFO("worst group " << r.worst_name << " rel " << r.worst_rel);
    CHECK(r.worst_rel < 1e-6);
}

}  // namespace

TEST_SUITE("autodiff") {
    TEST_CASE("elementwise and matrix ops") {
        std::mt19937_64 rng(1);
        auto a = ad::leaf(randn({3, 4}, rng), true);
        auto b = ad::leaf(randn({3, 4}, rng), true);
        auto w = ad::leaf(randn({4, 5}, rng), true);
        auto bias = ad::leaf(randn({5}, rng), true);
        auto s = ad::leaf(Tensor::scalar(0.7), true);
        ParameterList p{{"a", a}, {"b", b}, {"w", w}, {"bias", bias}, {"s", s}};
        expect_ok(p, [&] {
            auto x = ad::add(ad::mul(a, b), ad::sub(ad::gelu(a), ad::scale(b, 0.3)));
            x = ad::shift(ad::mul_scalar(x, ad::exp(ad::clamp_max(s, 2.0))), 0.1);
            auto y = ad::linear(x, w, bias);
            return probe(ad::softmax_rows(ad::add(y, ad::matmul(ad::matmul_nt(y, ad::matmul(x, w)), y))));
        });
    }

    TEST_CASE("normalization and structural ops") {
        std::mt19937_64 rng(2);
        auto x = ad::leaf(randn({6, 4}, rng), true);
        auto g = ad::leaf(randn({4}, rng), true);
        auto be = ad::leaf(randn({4}, rng), true);
        auto pos = ad::leaf(randn({3, 4}, rng), true);
        ParameterList p{{"x", x}, {"g", g}, {"b", be}, {"pos", pos}};
        expect_ok(p, [&] {
            auto y = ad::layer_norm(ad::add_tiled(x, pos), g, be);
            auto top = ad::slice_rows(y, 0, 3);
            auto picked = ad::gather_rows(y, {5, 1, 1, 2});
            auto joined = ad::concat_rows({top, picked, ad::repeat_rows(ad::mean_rows(y), 2)});
            auto wide = ad::concat_cols(joined, ad::l2_normalize_rows(joined));
            auto blocks = ad::gather_blocks(ad::reshape(wide, {9, 8}), {1, 0, 1, 0, 0, 1, 1, 0, 1}, 4);
            return probe(blocks);
        });
    }

    TEST_CASE("attention, causal and bidirectional") {
        std::mt19937_64 rng(3);
        auto q = ad::leaf(randn({8, 4}, rng), true);
        auto k = ad::leaf(randn({8, 4}, rng), true);
        auto v = ad::leaf(randn({8, 4}, rng), true);
        ParameterList p{{"q", q}, {"k", k}, {"v", v}};
        for (bool causal : {false, true}) expect_ok(p, [&] { return probe(ad::attention(q, k, v, 2, 4, 2, causal)); });
    }

    TEST_CASE("causal attention ignores later positions") {
        std::mt19937_64 rng(4);
        Tensor q = randn({4, 2}, rng), k = randn({4, 2}, rng), v = randn({4, 2}, rng);
        const Tensor base = ad::attention(ad::constant(q), ad::constant(k), ad::constant(v), 1, 4, 1, true).value();
        k[7] += 1.0;
        v[7] += 1.0;
        const Tensor moved = ad::attention(ad::constant(q), ad::constant(k), ad::constant(v), 1, 4, 1, true).value();
        for (std::size_t i = 0; i < 6; ++i) CHECK(moved[i] == base[i]);
    }

    TEST_CASE("convolution and pooling") {
        std::mt19937_64 rng(5);
        auto x = ad::leaf(randn({2, 2, 7, 7}, rng), true);
        auto w = ad::leaf(randn({3, 2, 3, 3}, rng), true);
        auto b = ad::leaf(randn({3}, rng), true);
        ParameterList p{{"x", x}, {"w", w}, {"b", b}};
        expect_ok(p, [&] { return probe(ad::global_avg_pool(ad::gelu(ad::conv2d(x, w, b, 2, 1)))); });
        expect_ok(p, [&] { return probe(ad::conv2d(x, w, b, 1, 0)); });
    }

    TEST_CASE("conv2d matches a direct loop") {
        std::mt19937_64 rng(6);
        const Tensor x = randn({1, 2, 5, 5}, rng), w = randn({2, 2, 3, 3}, rng), b = randn({2}, rng);
        const Tensor y = ad::conv2d(ad::constant(x), ad::constant(w), ad::constant(b), 2, 1).value();
        REQUIRE(y.shape() == std::vector<int>{1, 2, 3, 3});
        for (int o = 0; o < 2; ++o)
            for (int oy = 0; oy < 3; ++oy)
                for (int ox = 0; ox < 3; ++ox) {
                    double acc = b[static_cast<std::size_t>(o)];
                    for (int c = 0; c < 2; ++c)
                        for (int ky = 0; ky < 3; ++ky)
                            for (int kx = 0; kx < 3; ++kx) {
                                const int iy = oy * 2 - 1 + ky, ix = ox * 2 - 1 + kx;
                                if (iy < 0 || ix < 0 || iy >= 5 || ix >= 5) continue;
                                acc += w[static_cast<std::size_t>(((o * 2 + c) * 3 + ky) * 3 + kx)] *
                                       x[static_cast<std::size_t>((c * 5 + iy) * 5 + ix)];
                            }
                    CHECK(y[static_cast<std::size_t>((o * 3 + oy) * 3 + ox)] == doctest::Approx(acc).epsilon(1e-13));
                }
    }

    TEST_CASE("loss ops") {
        std::mt19937_64 rng(7);
        auto z = ad::leaf(randn({3, 5}, rng), true);
        Tensor q({3, 5}, 0.0);
        std::uniform_real_distribution<double> u(0.1, 1);
        for (int r = 0; r < 3; ++r) {
            double s = 0;
            for (int c = 0; c < 5; ++c) s += (q[static_cast<std::size_t>(r * 5 + c)] = u(rng));
            for (int c = 0; c < 5; ++c) q[static_cast<std::size_t>(r * 5 + c)] /= s;
        }
        ParameterList p{{"z", z}};
        expect_ok(p, [&] { return ad::soft_cross_entropy(z, q); });
        expect_ok(p, [&] { return ad::binary_cross_entropy_logits(z, q); });
    }

    TEST_CASE("frozen leaves receive no gradient and no-grad mode records nothing") {
        auto a = ad::leaf(Tensor({2}, 1.5), true);
        auto frozen = ad::leaf(Tensor({2}, 2.0), false);
        ad::backward(ad::sum_all(ad::mul(a, frozen)));
        CHECK(a.grad()[0] == 2.0);
        CHECK_FALSE(frozen.has_grad());
        {
            ad::NoGradGuard guard;
            CHECK_FALSE(ad::grad_enabled());
            const auto y = ad::mul(a, a);
            CHECK_FALSE(y.requires_grad());
        }
        CHECK(ad::grad_enabled());
    }
}
