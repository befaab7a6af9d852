#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <set>
#include <string>
#include <vector>

#include "wch/encoder.hpp"
#include "wch/grad_check.hpp"
#include "wch/tensor.hpp"

using Td = wch::Tensor<double>;
using Enc = wch::Encoder<double>;

namespace {

wch::EncoderConfig tiny_cfg(int64_t layers = 1) {
    wch::EncoderConfig cfg;
    cfg.n_patches = 4;
    cfg.patch_dim = 5;
    cfg.model_dim = 8;
    cfg.n_layers = layers;
    cfg.n_heads = 2;
    cfg.code_length = 4;
    cfg.seed = 42;
    return cfg;
}

Td rnd(wch::Shape shape, uint64_t seed, double sigma = 1.0) {
    auto rng = wch::make_rng(seed);
    return Td::randn(std::move(shape), rng, sigma);
}

}  // namespace

TEST_CASE("encoder config validation") {
    wch::EncoderConfig cfg = tiny_cfg();
    cfg.model_dim = 9;  // not divisible by 2 heads
    CHECK_THROWS_AS(wch::validate(cfg), wch::ConfigError);
    cfg = tiny_cfg();
    cfg.code_length = 3;
    CHECK_THROWS_AS(wch::validate(cfg), wch::ConfigError);
    cfg = tiny_cfg();
    cfg.n_patches = 0;
    CHECK_THROWS_AS(wch::validate(cfg), wch::ConfigError);
}

TEST_CASE("zeroed projection embeds everything to zero") {
    Enc enc = Enc::init(tiny_cfg(0));
    std::fill(enc.lp_w.values().begin(), enc.lp_w.values().end(), 0.0);
    std::fill(enc.lp_b.values().begin(), enc.lp_b.values().end(), 0.0);
    std::fill(enc.pos.values().begin(), enc.pos.values().end(), 0.0);
    Td x = rnd({3, 4, 5}, 1);
    Td out = enc.embed(x);
    REQUIRE(out.shape() == wch::Shape{3, 4, 8});
    for (double v : out.values()) CHECK(v == 0.0);
}

TEST_CASE("identity projection with zero position table reproduces inputs") {
    wch::EncoderConfig cfg = tiny_cfg(0);
    cfg.patch_dim = cfg.model_dim;  // square so LP can be the identity
    Enc enc = Enc::init(cfg);
    enc.lp_w = Td::identity(cfg.model_dim);
    std::fill(enc.lp_b.values().begin(), enc.lp_b.values().end(), 0.0);
    std::fill(enc.pos.values().begin(), enc.pos.values().end(), 0.0);
    Td x = rnd({2, 4, 8}, 2);
    Td out = enc.embed(x);
    CHECK(out.values() == x.values());
}

TEST_CASE("embed is position sensitive: permuting patches moves outputs") {
    Enc enc = Enc::init(tiny_cfg(0));
    Td x = rnd({1, 4, 5}, 3);
    // swap patches 0 and 1 of the single image
    std::vector<double> swapped = x.values();
    for (int64_t j = 0; j < 5; ++j) std::swap(swapped[j], swapped[5 + j]);
    Td xs = Td::from({1, 4, 5}, swapped);

    Td a = enc.embed(x);
    Td b = enc.embed(xs);
    // patch 0's embedding in b is patch 1's projection plus row 0 of the
    // position table, so it must differ from a's patch-1 embedding
    bool differs = false;
    for (int64_t j = 0; j < 8; ++j)
        if (a.values()[8 + j] != b.values()[j]) differs = true;
    CHECK(differs);
}

TEST_CASE("zero-layer encoder is exactly the embedding") {
    Enc enc = Enc::init(tiny_cfg(0));
    Td x = rnd({2, 4, 5}, 4);
    CHECK(enc.encode(x).values() == enc.embed(x).values());
}

TEST_CASE("encode keeps shape and is deterministic") {
    Enc a = Enc::init(tiny_cfg(2));
    Enc b = Enc::init(tiny_cfg(2));
    Td x = rnd({3, 4, 5}, 5);
    Td fa = a.encode(x);
    Td fb = b.encode(x);
    REQUIRE(fa.shape() == wch::Shape{3, 4, 8});
    CHECK(fa.values() == fb.values());  // same seed, same params, same result

    wch::EncoderConfig other = tiny_cfg(2);
    other.seed = 43;
    Td fc = Enc::init(other).encode(x);
    CHECK(fa.values() != fc.values());
}

TEST_CASE("encode rejects non-finite activations with the layer index") {
    Enc enc = Enc::init(tiny_cfg(2));
    const double inf = std::numeric_limits<double>::infinity();
    enc.layers[1].w2.values()[0] = inf;
    Td x = rnd({1, 4, 5}, 6);
    CHECK_THROWS_AS(enc.encode(x), wch::NumericError);
    CHECK_THROWS_WITH(enc.encode(x),
                      Catch::Matchers::ContainsSubstring("layer 1"));
}

TEST_CASE("gradients flow end to end through a one-layer encoder") {
    Enc enc = Enc::init(tiny_cfg(1));
    Td patches = rnd({2, 4, 5}, 7);
    Td coeff = rnd({2, 4, 8}, 8);
    auto res = wch::grad_check(
        [&](const std::vector<Td>& in) {
            return wch::sum_all(wch::mul(enc.encode(in[0]), coeff));
        },
        {patches}, 1e-4);
    CHECK(res.max_rel_err < 1e-5);

    // and through two parameter tensors sharing the same graph
    auto res_params = wch::grad_check(
        [&](const std::vector<Td>& in) {
            (void)in;  // perturbations land in the encoder's own tensors
            return wch::sum_all(wch::mul(enc.encode(patches), coeff));
        },
        {enc.lp_w, enc.layers[0].wq}, 1e-4);
    CHECK(res_params.max_rel_err < 1e-5);
}

TEST_CASE("hash pools, projects, and binarizes") {
    Enc enc = Enc::init(tiny_cfg(1));
    Td f = rnd({3, 4, 8}, 9);
    auto [codes, pre] = enc.hash(f);
    REQUIRE(codes.shape() == wch::Shape{3, 4});
    REQUIRE(pre.shape() == wch::Shape{3, 4});
    for (double v : codes.values()) CHECK((v == 1.0 || v == -1.0));

    // all-positive pre-codes force all-plus-one codes
    std::fill(enc.head_w.values().begin(), enc.head_w.values().end(), 0.0);
    std::fill(enc.head_b.values().begin(), enc.head_b.values().end(), 2.5);
    auto [codes2, pre2] = enc.hash(f);
    for (double v : pre2.values()) CHECK(v == 2.5);
    for (double v : codes2.values()) CHECK(v == 1.0);
}

TEST_CASE("duplicate images in a batch hash to identical codes") {
    Enc enc = Enc::init(tiny_cfg(2));
    Td x = rnd({1, 4, 5}, 10);
    std::vector<double> doubled = x.values();
    doubled.insert(doubled.end(), x.values().begin(), x.values().end());
    Td xx = Td::from({2, 4, 5}, doubled);
    auto [codes, pre] = enc.hash(enc.encode(xx));
    for (int64_t j = 0; j < 4; ++j) {
        CHECK(codes.values()[j] == codes.values()[4 + j]);
        CHECK(pre.values()[j] == Catch::Approx(pre.values()[4 + j]).margin(1e-12));
    }
}

TEST_CASE("batch reordering reorders codes consistently") {
    Enc enc = Enc::init(tiny_cfg(2));
    Td x = rnd({4, 4, 5}, 11);
    auto [codes, pre] = enc.hash(enc.encode(x));

    // swap images 1 and 3
    std::vector<double> swapped = x.values();
    const int64_t stride = 4 * 5;
    for (int64_t j = 0; j < stride; ++j)
        std::swap(swapped[1 * stride + j], swapped[3 * stride + j]);
    auto [codes2, pre2] = enc.hash(enc.encode(Td::from({4, 4, 5}, swapped)));

    const int64_t l = 4;
    const int64_t map[4] = {0, 3, 2, 1};
    for (int64_t i = 0; i < 4; ++i)
        for (int64_t j = 0; j < l; ++j) {
            CHECK(codes2.values()[i * l + j] ==
                  codes.values()[map[i] * l + j]);
            CHECK(pre2.values()[i * l + j] ==
                  Catch::Approx(pre.values()[map[i] * l + j]).margin(1e-9));
        }
}

TEST_CASE("straight-through mode is selectable per config") {
    wch::EncoderConfig cfg = tiny_cfg(0);
    cfg.model_dim = 4;
    cfg.n_patches = 1;
    cfg.patch_dim = 4;
    cfg.n_heads = 1;

    for (bool identity : {false, true}) {
        cfg.ste_identity = identity;
        Enc enc = Enc::init(cfg);
        enc.head_w = Td::identity(4);
        std::fill(enc.head_b.values().begin(), enc.head_b.values().end(), 0.0);
        Td f = Td::from({1, 1, 4}, {2.0, -3.0, 1.5, 0.5})
                   .set_requires_grad(true);
        auto [codes, pre] = enc.hash(f);
        wch::sum_all(codes).backward();
        const auto& g = f.grad();
        if (identity) {
            CHECK(g == std::vector<double>{1, 1, 1, 1});
        } else {
            CHECK(g == std::vector<double>{0, 0, 0, 1});  // only |pre| <= 1
        }
    }
}

TEST_CASE("frozen position table opts out of gradients") {
    wch::EncoderConfig cfg = tiny_cfg(1);
    cfg.freeze_position = true;
    Enc enc = Enc::init(cfg);
    CHECK(!enc.pos.requires_grad());
    CHECK(enc.lp_w.requires_grad());
}

TEST_CASE("parameter enumeration is complete and uniquely named") {
    Enc enc = Enc::init(tiny_cfg(2));
    auto params = enc.params();
    // projection trio, two blocks of 16, the closing norm pair, head pair
    CHECK(params.size() == 3 + 2 * 16 + 2 + 2);
    std::set<std::string> names;
    for (auto& [name, t] : params) {
        CHECK(t->defined());
        names.insert(name);
    }
    CHECK(names.size() == params.size());
}
