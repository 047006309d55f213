#include <cmath>

#include "doctest.h"
#include "hyneter/hnb.hpp"
#include "hyneter/ops.hpp"
#include "support.hpp"

using namespace hyneter;
using testing::random_tensor;

namespace {

struct BlockTensors {
  std::vector<Tensor> t;  // BlockParams order
};

BlockTensors random_block(std::size_t c, std::size_t hidden, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  BlockTensors b;
  for (Shape s : {Shape{c}, Shape{c}, Shape{c, 3 * c}, Shape{3 * c}, Shape{c, c}, Shape{c}, Shape{c}, Shape{c},
                  Shape{c, hidden}, Shape{hidden}, Shape{hidden, c}, Shape{c}}) {
    b.t.push_back(random_tensor(std::move(s), rng, 0.3));
  }
  return b;
}

// Residual branches that contribute exactly zero: the block is the identity.
BlockTensors identity_block(std::size_t c, std::size_t hidden) {
  BlockTensors b = random_block(c, hidden, 77);
  for (std::size_t i : {4u, 5u, 10u, 11u}) b.t[i].fill(0.0);
  return b;
}

BlockParams bind_block(Tape& tape, const BlockTensors& b, std::size_t heads) {
  std::vector<Var> v;
  for (const Tensor& t : b.t) v.push_back(tape.constant(t));
  return {v[0], v[1], {v[2], v[3], v[4], v[5], heads, 1.0}, v[6], v[7], {v[8], v[9], v[10], v[11]}};
}

struct TripleTensors {
  Tensor k1, k3, k5;
};

TripleTensors random_triple(std::size_t cout, std::size_t cin, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return {random_tensor({cout, cin, 1, 1}, rng, 0.3), random_tensor({cout, cin, 3, 3}, rng, 0.3),
          random_tensor({cout, cin, 5, 5}, rng, 0.3)};
}

ConvTriple bind_triple(Tape& tape, const TripleTensors& t) {
  return {tape.constant(t.k1), tape.constant(t.k3), tape.constant(t.k5)};
}

}  // namespace

TEST_SUITE("hnb") {

TEST_CASE("multi-granularity conv: zero kernels give a zero map") {
  Tape tape;
  TripleTensors z{Tensor(Shape{2, 2, 1, 1}), Tensor(Shape{2, 2, 3, 3}), Tensor(Shape{2, 2, 5, 5})};
  Var y = multi_granularity_conv(tape.constant(random_tensor({1, 2, 4, 4}, 1)), bind_triple(tape, z));
  for (double v : y.value().data()) CHECK(v == 0.0);
}

TEST_CASE("multi-granularity conv: only the 1x1 kernel set equals that conv alone") {
  Tape tape;
  TripleTensors t = random_triple(3, 2, 2);
  t.k3.fill(0.0);
  t.k5.fill(0.0);
  const Tensor x = random_tensor({2, 2, 4, 4}, 3);
  Var y = multi_granularity_conv(tape.constant(x), bind_triple(tape, t));
  Var alone = ops::conv2d(tape.constant(x), tape.constant(t.k1), std::nullopt, 1, 0);
  CHECK(bit_equal(y.value(), alone.value()));
}

TEST_CASE("multi-granularity conv is the sum of three same-padded convolutions") {
  Tape tape;
  const TripleTensors t = random_triple(2, 2, 4);
  const Tensor x = random_tensor({1, 2, 4, 4}, 5);
  Var y = multi_granularity_conv(tape.constant(x), bind_triple(tape, t));
  const Tensor a = testing::conv2d_oracle(x, t.k1, nullptr, 1, 0);
  const Tensor b = testing::conv2d_oracle(x, t.k3, nullptr, 1, 1);
  const Tensor c = testing::conv2d_oracle(x, t.k5, nullptr, 1, 2);
  REQUIRE(y.shape() == a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) CHECK(y.value()[i] == doctest::Approx(a[i] + b[i] + c[i]).epsilon(1e-12));
}

TEST_CASE("multi-granularity conv rejects mismatched kernels") {
  Tape tape;
  TripleTensors t = random_triple(2, 2, 6);
  t.k3 = Tensor(Shape{2, 2, 5, 5});
  CHECK_THROWS_AS(multi_granularity_conv(tape.constant(Tensor(Shape{1, 2, 4, 4})), bind_triple(tape, t)),
                  std::invalid_argument);
}

TEST_CASE("stacked conv layers apply GELU between layers only") {
  Tape tape;
  const TripleTensors l1 = random_triple(2, 2, 7), l2 = random_triple(2, 2, 8);
  const Tensor x = random_tensor({1, 2, 4, 4}, 9);
  Var stacked = conv_branch(tape.constant(x), {bind_triple(tape, l1), bind_triple(tape, l2)});
  Var manual = multi_granularity_conv(ops::gelu(multi_granularity_conv(tape.constant(x), bind_triple(tape, l1))),
                                      bind_triple(tape, l2));
  CHECK(bit_equal(stacked.value(), manual.value()));
}

TEST_CASE("zero conv branch recovers the plain transformer stage") {
  Tape tape;
  const Tensor s = random_tensor({2, 16, 4}, 10);
  HnbStageParams p;
  p.transformer_branch.push_back(bind_block(tape, random_block(4, 8, 11), 1));
  p.conv_branch.push_back({tape.constant(Tensor(Shape{4, 4, 1, 1})), tape.constant(Tensor(Shape{4, 4, 3, 3})),
                           tape.constant(Tensor(Shape{4, 4, 5, 5}))});
  TokenGrid fused = hnb_stage({tape.constant(s), 4, 4}, p);
  TokenGrid plain = transformer_block({tape.constant(s), 4, 4}, p.transformer_branch[0], std::nullopt);
  CHECK(bit_equal(fused.tokens.value(), plain.tokens.value()));
}

TEST_CASE("identity transformer branch with unit local features gives S + tanh(S)") {
  Tape tape;
  const Tensor s = random_tensor({1, 9, 3}, 12);
  TokenGrid x = transformer_block({tape.constant(s), 3, 3}, bind_block(tape, identity_block(3, 6), 1), std::nullopt);
  REQUIRE(bit_equal(x.tokens.value(), s));
  Var fused = hnb_fuse(re_view(x), tape.constant(Tensor(Shape{1, 3, 3, 3}, 1.0)));
  const Tensor out = flatten(fused).tokens.value();
  for (std::size_t i = 0; i < s.numel(); ++i) CHECK(out[i] == s[i] + std::tanh(s[i]));
}

TEST_CASE("fused output stays within |X| + 1") {
  Tape tape;
  const Tensor x = random_tensor({2, 3, 4, 4}, 13, 3.0);
  const Tensor s1 = random_tensor({2, 3, 4, 4}, 14, 3.0);
  Var y = hnb_fuse(tape.constant(x), tape.constant(s1));
  for (std::size_t i = 0; i < x.numel(); ++i) CHECK(std::abs(y.value()[i]) <= std::abs(x[i]) + 1.0);
}

TEST_CASE("conv kernels receive nonzero gradients through the fused stage") {
  Tape tape;
  const BlockTensors b = random_block(4, 8, 15);
  const TripleTensors t = random_triple(4, 4, 16);
  HnbStageParams p;
  p.transformer_branch.push_back(bind_block(tape, b, 2));
  p.conv_branch.push_back({tape.parameter("k1", t.k1), tape.parameter("k3", t.k3), tape.parameter("k5", t.k5)});
  TokenGrid out = hnb_stage({tape.constant(random_tensor({1, 16, 4}, 17)), 4, 4}, p);
  auto grads = tape.backward(ops::weighted_sum(out.tokens, random_tensor({1, 16, 4}, 18)));
  for (const char* k : {"k1", "k3", "k5"}) {
    double norm = 0.0;
    for (double g : grads.at(k).data()) norm += g * g;
    INFO(k);
    CHECK(norm > 0.0);
  }
}

TEST_CASE("hnb stage gradients match central differences over 20 seeds") {
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    std::vector<Tensor> in{random_tensor({1, 9, 2}, rng)};
    for (Tensor& t : random_block(2, 4, seed + 100).t) in.push_back(std::move(t));
    const TripleTensors tr = random_triple(2, 2, seed + 200);
    in.push_back(tr.k1);
    in.push_back(tr.k3);
    in.push_back(tr.k5);
    const Tensor probe = random_tensor({1, 9, 2}, rng);
    auto build = [&](Tape&, const std::vector<Var>& v) {
      HnbStageParams p;
      p.transformer_branch.push_back(
          {v[1], v[2], {v[3], v[4], v[5], v[6], 1, 1.0}, v[7], v[8], {v[9], v[10], v[11], v[12]}});
      p.conv_branch.push_back({v[13], v[14], v[15]});
      return ops::weighted_sum(hnb_stage({v[0], 3, 3}, p).tokens, probe);
    };
    worst = std::max(worst, testing::finite_difference_check(in, build).worst);
  }
  CHECK(worst <= 1e-4);
}

}  // TEST_SUITE
