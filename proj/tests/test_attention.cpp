#include <cmath>

#include "doctest.h"
#include "hyneter/attention.hpp"
#include "hyneter/ops.hpp"
#include "support.hpp"

using namespace hyneter;
using testing::random_tensor;

namespace {

struct AttnTensors {
  Tensor qkv_w, qkv_b, proj_w, proj_b;
};

AttnTensors identity_attention(std::size_t c) {
  AttnTensors t{Tensor(Shape{c, 3 * c}), Tensor(Shape{3 * c}), Tensor(Shape{c, c}), Tensor(Shape{c})};
  for (std::size_t i = 0; i < c; ++i) {
    for (std::size_t part = 0; part < 3; ++part) t.qkv_w.at({i, part * c + i}) = 1.0;
    t.proj_w.at({i, i}) = 1.0;
  }
  return t;
}

AttnTensors random_attention(std::size_t c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return {random_tensor({c, 3 * c}, rng, 0.5), random_tensor({3 * c}, rng), random_tensor({c, c}, rng),
          random_tensor({c}, rng)};
}

AttentionParams bind(Tape& tape, const AttnTensors& t, std::size_t heads, std::optional<double> delta) {
  return {tape.constant(t.qkv_w), tape.constant(t.qkv_b), tape.constant(t.proj_w), tape.constant(t.proj_b), heads,
          delta};
}

}  // namespace

TEST_SUITE("attention") {

TEST_CASE("patch partition token counts") {
  Tape tape;
  Var pos4 = tape.constant(Tensor(Shape{4, 5}));
  TokenGrid g = patch_partition(tape.constant(random_tensor({1, 3, 8, 8}, 1)), 4,
                                tape.constant(random_tensor({5, 3, 4, 4}, 2)), std::nullopt, pos4);
  CHECK(g.length() == 4);
  CHECK(g.grid_h == 2);
  CHECK(g.grid_w == 2);
  CHECK(g.channels() == 5);

  TokenGrid big = patch_partition(tape.constant(Tensor(Shape{2, 3, 32, 32})), 4,
                                  tape.constant(random_tensor({5, 3, 4, 4}, 3)), std::nullopt,
                                  tape.constant(Tensor(Shape{64, 5})));
  CHECK(big.length() == 64);
  // zero image, zero positions, no bias
  for (double v : big.tokens.value().data()) CHECK(v == 0.0);
}

TEST_CASE("patch partition rejects sizes that are not a multiple of the patch") {
  Tape tape;
  try {
    patch_partition(tape.constant(Tensor(Shape{1, 3, 10, 8})), 4, tape.constant(Tensor(Shape{5, 3, 4, 4})),
                    std::nullopt, tape.constant(Tensor(Shape{4, 5})));
    FAIL("expected a throw");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("divisible by patch size 4") != std::string::npos);
  }
}

TEST_CASE("re_view and flatten are inverse and keep positions") {
  Tape tape;
  const Tensor tokens = random_tensor({2, 12, 3}, 4);
  TokenGrid g{tape.constant(tokens), 3, 4};
  Var map = re_view(g);
  REQUIRE(map.shape() == Shape{2, 3, 3, 4});
  for (std::size_t r = 0; r < 3; ++r) {
    for (std::size_t c = 0; c < 4; ++c) {
      for (std::size_t ch = 0; ch < 3; ++ch) CHECK(map.value().at({1, ch, r, c}) == tokens.at({1, r * 4 + c, ch}));
    }
  }
  TokenGrid back = flatten(map);
  CHECK(back.grid_h == 3);
  CHECK(back.grid_w == 4);
  CHECK(bit_equal(back.tokens.value(), tokens));

  TokenGrid one{tape.constant(random_tensor({1, 1, 2}, 5)), 1, 1};
  CHECK(re_view(one).shape() == Shape{1, 2, 1, 1});
}

TEST_CASE("scaled scores: hand example and delta invariants") {
  Tape tape;
  // q = k = [1, 2] as two tokens with dh = 1
  Var q = tape.constant(Tensor::from({1, 2, 1}, {1, 2}));
  Var doubled = ops::scaled_scores(q, q, 2.0);
  const std::vector<double> expect{1, 4, 4, 4};
  for (std::size_t i = 0; i < 4; ++i) CHECK(doubled.value()[i] == expect[i]);

  const Tensor qs = random_tensor({3, 5, 4}, 6), ks = random_tensor({3, 5, 4}, 7);
  Var plain = ops::scaled_scores(tape.constant(qs), tape.constant(ks), std::nullopt);
  Var one = ops::scaled_scores(tape.constant(qs), tape.constant(ks), 1.0);
  CHECK(bit_equal(plain.value(), one.value()));
  Var scaled = ops::scaled_scores(tape.constant(qs), tape.constant(ks), 2.5);
  for (std::size_t g = 0; g < 3; ++g) {
    for (std::size_t i = 0; i < 5; ++i) {
      for (std::size_t j = 0; j < 5; ++j) {
        const double base = one.value().at({g, i, j});
        CHECK(scaled.value().at({g, i, j}) == (i == j ? base : base * 2.5));
      }
    }
  }
}

TEST_CASE("single-token attention with identity value and output maps returns its input") {
  Tape tape;
  const Tensor x = random_tensor({1, 1, 4}, 8);
  AttnTensors t = identity_attention(4);
  TokenGrid out = gmsa({tape.constant(x), 1, 1}, bind(tape, t, 2, 1.0), std::nullopt);
  CHECK(bit_equal(out.tokens.value(), x));
}

TEST_CASE("two-token identity attention matches a hand softmax mixture") {
  Tape tape;
  const Tensor x = Tensor::from({1, 2, 2}, {0.3, -1.2, 0.8, 0.5});
  TokenGrid out = gmsa({tape.constant(x), 1, 2}, bind(tape, identity_attention(2), 1, 1.0), std::nullopt);
  for (std::size_t i = 0; i < 2; ++i) {
    double s[2];
    for (std::size_t j = 0; j < 2; ++j) {
      s[j] = (x.at({0, i, 0}) * x.at({0, j, 0}) + x.at({0, i, 1}) * x.at({0, j, 1})) / std::sqrt(2.0);
    }
    const double w0 = std::exp(s[0]) / (std::exp(s[0]) + std::exp(s[1]));
    const double w1 = 1.0 - w0;
    for (std::size_t e = 0; e < 2; ++e) {
      CHECK(out.tokens.value().at({0, i, e}) ==
            doctest::Approx(w0 * x.at({0, 0, e}) + w1 * x.at({0, 1, e})).epsilon(1e-13));
    }
  }
}

TEST_CASE("a window covering the whole grid is global attention, bit for bit") {
  Tape tape;
  const Tensor x = random_tensor({2, 16, 8}, 9);
  const AttnTensors t = random_attention(8, 10);
  TokenGrid global = gmsa({tape.constant(x), 4, 4}, bind(tape, t, 2, 1.5), std::nullopt);
  TokenGrid whole = gmsa({tape.constant(x), 4, 4}, bind(tape, t, 2, 1.5), 4);
  CHECK(bit_equal(global.tokens.value(), whole.tokens.value()));
}

TEST_CASE("windowed attention only mixes tokens within a window") {
  const Tensor x = random_tensor({1, 16, 4}, 11);
  const AttnTensors t = random_attention(4, 12);
  Tensor nudged = x;
  // token (0,0) lives in the top-left 2x2 window
  for (std::size_t e = 0; e < 4; ++e) nudged.at({0, 0, e}) += 1.0;
  Tape tape;
  const Tensor a = gmsa({tape.constant(x), 4, 4}, bind(tape, t, 1, 1.0), 2).tokens.value();
  const Tensor b = gmsa({tape.constant(nudged), 4, 4}, bind(tape, t, 1, 1.0), 2).tokens.value();
  for (std::size_t r = 0; r < 4; ++r) {
    for (std::size_t c = 0; c < 4; ++c) {
      const bool same_window = r < 2 && c < 2;
      bool changed = false;
      for (std::size_t e = 0; e < 4; ++e) changed = changed || a.at({0, r * 4 + c, e}) != b.at({0, r * 4 + c, e});
      CHECK(changed == same_window);
    }
  }
}

TEST_CASE("global attention is equivariant to token permutation") {
  const Tensor x = random_tensor({1, 6, 4}, 13);
  const AttnTensors t = random_attention(4, 14);
  const std::vector<std::size_t> perm{3, 0, 5, 1, 4, 2};
  Tensor permuted(x.shape());
  for (std::size_t i = 0; i < 6; ++i) {
    for (std::size_t e = 0; e < 4; ++e) permuted.at({0, i, e}) = x.at({0, perm[i], e});
  }
  Tape tape;
  const Tensor a = gmsa({tape.constant(x), 2, 3}, bind(tape, t, 2, 1.3), std::nullopt).tokens.value();
  const Tensor b = gmsa({tape.constant(permuted), 2, 3}, bind(tape, t, 2, 1.3), std::nullopt).tokens.value();
  for (std::size_t i = 0; i < 6; ++i) {
    for (std::size_t e = 0; e < 4; ++e) CHECK(b.at({0, i, e}) == doctest::Approx(a.at({0, perm[i], e})).epsilon(1e-12));
  }
}

TEST_CASE("gmsa rejects indivisible heads and windows") {
  Tape tape;
  const AttnTensors t = random_attention(6, 15);
  TokenGrid g{tape.constant(random_tensor({1, 16, 6}, 16)), 4, 4};
  CHECK_THROWS_AS(gmsa(g, bind(tape, t, 4, 1.0), std::nullopt), std::invalid_argument);
  CHECK_THROWS_AS(gmsa(g, bind(tape, t, 2, 1.0), 3), std::invalid_argument);
}

TEST_CASE("gmsa gradients match central differences over 20 seeds") {
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    const AttnTensors t = random_attention(4, seed + 50);
    std::vector<Tensor> in{random_tensor({2, 16, 4}, rng), t.qkv_w, t.qkv_b, t.proj_w, t.proj_b};
    const Tensor probe = random_tensor({2, 16, 4}, rng);
    const std::optional<std::size_t> window = seed % 2 == 0 ? std::optional<std::size_t>(2) : std::nullopt;
    const double delta = 0.5 + 0.1 * static_cast<double>(seed);
    auto build = [&](Tape&, const std::vector<Var>& v) {
      const AttentionParams p{v[1], v[2], v[3], v[4], 2, delta};
      return ops::weighted_sum(gmsa({v[0], 4, 4}, p, window).tokens, probe);
    };
    worst = std::max(worst, testing::finite_difference_check(in, build).worst);
  }
  CHECK(worst <= 1e-4);
}

}  // TEST_SUITE
