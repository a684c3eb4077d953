#include "stainfocus/checkpoint.hpp"
#include "stainfocus/encoders.hpp"
#include "stainfocus/model.hpp"

#include "support.hpp"

#include <doctest.h>

#include <cmath>

using namespace stainfocus;
namespace ad = stainfocus::ad;

namespace {

double norm(std::span<const double> v) {
    double s = 0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

struct TextFixture {
    TextConfig cfg;
    Rng rng{11};
    TextEncoder text;
    Adapter adapter;
    TextFixture() {
        cfg.vocab_size = 128;
        cfg.token_dim = 8;
        cfg.embed_dim = 8;
        cfg.layers = 1;
        cfg.heads = 2;
        cfg.mlp_hidden = 16;
        cfg.max_length = 12;
        text = TextEncoder(cfg, rng);
        adapter = Adapter(8, 16, 2, rng);
    }
};

}  // namespace

TEST_SUITE("encoders.vision") {
    TEST_CASE("unit norm, deterministic, sensitive to single pixels") {
        VisionConfig vc;
        vc.image_size = 16;
        vc.channels = {4, 4, 8, 8};
        vc.embed_dim = 8;
        Rng rng(3);
        const VisionEncoder enc(vc, rng);
        std::mt19937_64 img_rng(4);
        int differing = 0;
        for (int t = 0; t < 100; ++t) {
            Image a = sftest::random_image(16, 16, img_rng);
            Image b = a;
            b.at(t % 16, (t * 7) % 16) += 0.25;
            const auto va = encode_image(enc, a);
            CHECK(std::fabs(norm(va) - 1.0) < 1e-6);
            CHECK(encode_image(enc, a) == va);
            if (encode_image(enc, b) != va) ++differing;
        }
        CHECK(differing == 100);
    }

    TEST_CASE("size mismatch is rejected") {
        VisionConfig vc;
        vc.image_size = 16;
        Rng rng(3);
        const VisionEncoder enc(vc, rng);
        CHECK_THROWS_AS(encode_image(enc, Image(20, 20)), std::invalid_argument);
    }
}

TEST_SUITE("encoders.text") {
    TEST_CASE("deterministic unit-norm pooled output") {
        TextFixture f;
        Tokenizer tok(128);
        const auto ids = tok.encode("a fluorescence image");
        std::vector<int> seq{Tokenizer::kStart};
        seq.insert(seq.end(), ids.begin(), ids.end());
        seq.push_back(Tokenizer::kEnd);
        const int len = static_cast<int>(seq.size());
        const Tensor e1 = encode_tokens(f.text, &f.adapter, f.text.embed_ids(seq), 1, len).value();
        const Tensor e2 = encode_tokens(f.text, &f.adapter, f.text.embed_ids(seq), 1, len).value();
        CHECK(e1 == e2);
        CHECK(std::fabs(norm(e1.values()) - 1.0) < 1e-6);
    }

    TEST_CASE("random sequences are unit norm") {
        TextFixture f;
        std::mt19937_64 rng(2);
        std::uniform_int_distribution<int> id(3, 127);
        for (int t = 0; t < 20; ++t) {
            std::vector<int> seq;
            for (int i = 0; i < 3 * 6; ++i) seq.push_back(id(rng));
            const Tensor e = encode_tokens(f.text, &f.adapter, f.text.embed_ids(seq), 3, 6).value();
            for (int r = 0; r < 3; ++r) CHECK(std::fabs(norm(std::span<const double>(e.data() + r * 8, 8)) - 1.0) < 1e-6);
        }
    }

    TEST_CASE("overlength sequence is rejected") {
        TextFixture f;
        std::vector<int> seq(13, 5);
        CHECK_THROWS_AS(f.text.run(f.text.embed_ids(seq), 1, 13), std::invalid_argument);
    }

    TEST_CASE("frozen encoder gets zero gradient, adapter gets a correct nonzero one") {
        TextFixture f;
        ParameterList text_params, adapter_params;
        f.text.collect(text_params, "text.");
        f.adapter.collect(adapter_params, "adapter.");
        set_trainable(text_params, false);
        set_trainable(adapter_params, true);
        // Nonzero last layers so every adapter weight influences the output.
        std::mt19937_64 rng(5);
        std::normal_distribution<double> n(0, 0.3);
        for (auto& p : adapter_params) {
            ad::Var v = p.var;
            for (auto& x : v.mutable_value().values()) x += n(rng);
        }
        const std::vector<int> seq{1, 7, 9, 11, 2};
        const Tensor w = [] {
            Tensor t({1, 8});
            for (int i = 0; i < 8; ++i) t[static_cast<std::size_t>(i)] = std::sin(1.0 + i);
            return t;
        }();
        auto loss = [&] {
            return ad::sum_all(ad::mul(encode_tokens(f.text, &f.adapter, f.text.embed_ids(seq), 1, 5), ad::constant(w)));
        };
        const auto r = sftest::check_gradients(adapter_params, loss, 6);
        INFO("worst " << r.worst_name << " " << r.worst_rel);
        CHECK(r.worst_rel < 1e-5);
        double total = 0;
        for (const auto& p : adapter_params) total += norm(p.var.grad().values());
        CHECK(total > 0);
        for (const auto& p : text_params) CHECK_FALSE(p.var.has_grad());
    }
}

TEST_SUITE("encoders.cosine") {
    TEST_CASE("self-similarity, orthogonality and the initial scale") {
        Tensor v({1, 2}, std::vector<double>{1, 0});
        Tensor t({2, 2}, std::vector<double>{1, 0, 0, 1});
        const double scale = std::exp(std::log(1.0 / 0.07));
        CHECK(scale == doctest::Approx(14.285714285714286).epsilon(1e-14));
        const Tensor z = cosine_logits(ad::constant(v), ad::constant(t), ad::constant(Tensor::scalar(scale))).value();
        CHECK(z[0] == doctest::Approx(scale));
        CHECK(z[1] == 0.0);
        StainRankModel m(micro_model_config());
        CHECK(m.logit_scale().value()[0] == doctest::Approx(1.0 / 0.07).epsilon(1e-12));
    }

    TEST_CASE("raw cosines stay in [-1, 1]") {
        std::mt19937_64 rng(1);
        std::normal_distribution<double> n(0, 1);
        Tensor a({5, 6}), b({7, 6});
        for (auto& x : a.values()) x = n(rng);
        for (auto& x : b.values()) x = n(rng);
        const auto na = ad::l2_normalize_rows(ad::constant(a)), nb = ad::l2_normalize_rows(ad::constant(b));
        const Tensor z = cosine_logits(na, nb, ad::constant(Tensor::scalar(1.0))).value();
        for (double x : z.values()) CHECK(std::fabs(x) <= 1.0 + 1e-12);
    }
}
