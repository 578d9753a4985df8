#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>

#include "nvs/config.hpp"
#include "nvs/substrate.hpp"

using namespace nvs;
using namespace nvs::ad;

namespace {

Tensor<double> random_tensor(Shape s, Rng& rng, double lo = -1, double hi = 1) {
  Tensor<double> t(std::move(s));
  for (auto& v : t.storage()) v = uniform(rng, lo, hi);
  return t;
}

}  // namespace

TEST(GradCheck, SquareIsExactUnderCentralDifferences) {
  Var<double> x = Var<double>::parameter(Tensor<double>::scalar(3.0), "x");
  auto g = grad(mul(x, x), {x});
  EXPECT_DOUBLE_EQ(g[0].value().item(), 6.0);
  auto r = grad_check([&] { return mul(x, x); }, {x}, 1e-4);
  EXPECT_LT(r.max_rel_error, 1e-9);
}

TEST(GradCheck, SumOfSinesRandomVector) {
  Rng rng(7);
  Var<double> x = Var<double>::parameter(random_tensor({8}, rng, -3, 3), "x");
  auto r = grad_check([&] { return sum(sin(x)); }, {x}, 1e-4);
  EXPECT_LT(r.max_rel_error, 1e-5);
  EXPECT_EQ(r.entries_checked, 8);
}

TEST(GradCheck, ConstantFunctionHasZeroError) {
  Var<double> x = Var<double>::parameter(Tensor<double>::full({4}, 2.0), "x");
  Var<double> c = Var<double>::constant(Tensor<double>::scalar(5.0));
  auto r = grad_check([&] { return add(c, scale(sum(x), 0.0)); }, {x}, 1e-4);
  EXPECT_EQ(r.max_rel_error, 0.0);
}

TEST(GradCheck, NonFiniteGradientNamesParameter) {
  Var<double> x = Var<double>::parameter(Tensor<double>::scalar(1000.0), "blowup");
  try {
    grad_check([&] { return exp(mul(x, x)); }, {x}, 1e-4);
    FAIL() << "expected a divergence error";
  } catch (const DivergenceError& e) {
    EXPECT_NE(std::string(e.what()).find("blowup"), std::string::npos);
  }
}

TEST(Ops, ElementwiseAndShapeOpsPassGradCheck) {
  Rng rng(1);
  auto a = Var<double>::parameter(random_tensor({3, 4}, rng), "a");
  auto b = Var<double>::parameter(random_tensor({4, 5}, rng), "b");
  auto bias = Var<double>::parameter(random_tensor({5}, rng), "bias");
  auto f = [&] {
    Var<double> h = softplus(linear(a, b, bias));
    Var<double> parts = concat_last(std::vector<Var<double>>{slice_last(h, 0, 2), sigmoid(slice_last(h, 2, 5))});
    return mean(square(mul(parts, leaky_relu(parts))));
  };
  EXPECT_LT(grad_check(f, {a, b, bias}, 1e-6).max_rel_error, tol::kGradCheck);
}

TEST(Ops, TransposedMatmulVariants) {
  Rng rng(2);
  auto a = Var<double>::parameter(random_tensor({3, 4}, rng), "a");
  auto b = Var<double>::parameter(random_tensor({5, 4}, rng), "b");
  auto c = Var<double>::parameter(random_tensor({3, 5}, rng), "c");
  auto f = [&] {
    Var<double> ab = matmul(a, b, false, true);                 // 3x5
    Var<double> t = matmul(ab, c, true, false);                 // 5x5
    Var<double> u = matmul(b, t, true, true);                   // 4x5
    return sum(square(matmul(a, u)));                           // 3x5
  };
  EXPECT_LT(grad_check(f, {a, b, c}, 1e-6).max_rel_error, tol::kGradCheck);
}

TEST(Ops, ConvUpsampleAttentionGradients) {
  Rng rng(3);
  auto x = Var<double>::parameter(random_tensor({2, 5, 6, 3}, rng), "x");
  auto w = Var<double>::parameter(random_tensor({3, 3, 3, 4}, rng, -0.5, 0.5), "w");
  auto ws = Var<double>::parameter(random_tensor({3, 3, 4, 2}, rng, -0.5, 0.5), "ws");
  auto f = [&] {
    Var<double> h = upsample2x(conv2d(x, w, 1, 1));
    Var<double> y = conv2d(h, ws, 2, 1);
    return mean(square(y));
  };
  EXPECT_LT(grad_check(f, {x, w, ws}, 1e-6).max_rel_error, tol::kGradCheck);

  auto q = Var<double>::parameter(random_tensor({2, 4, 3}, rng), "q");
  auto k = Var<double>::parameter(random_tensor({2, 6, 3}, rng), "k");
  auto v = Var<double>::parameter(random_tensor({2, 6, 2}, rng), "v");
  auto fa = [&] { return sum(square(attention(q, k, v))); };
  EXPECT_LT(grad_check(fa, {q, k, v}, 1e-6).max_rel_error, tol::kGradCheck);
}

// The gradient-penalty path differentiates an input gradient with respect to
// the weights; check that second-order result against finite differences.
TEST(Ops, DoubleBackwardThroughConvNet) {
  Rng rng(4);
  auto x = Var<double>::parameter(random_tensor({2, 6, 6, 2}, rng), "x");
  auto w1 = Var<double>::parameter(random_tensor({3, 3, 2, 3}, rng, -0.6, 0.6), "w1");
  auto b1 = Var<double>::parameter(random_tensor({3}, rng), "b1");
  auto w2 = Var<double>::parameter(random_tensor({27, 1}, rng, -0.6, 0.6), "w2");
  auto penalty = [&] {
    Var<double> h = leaky_relu(add_rowvec(conv2d(x, w1, 2, 1), b1));
    Var<double> logits = matmul(reshape(h, {2, 27}), w2);
    Var<double> gx = grad(sum(softplus(logits)), {x}, {}, true)[0];
    return sum(square(gx));
  };
  EXPECT_LT(grad_check(penalty, {w1, b1, w2}, 1e-6).max_rel_error, tol::kGradCheck);
}

TEST(Ops, FirstOrderOnlyOpsRejectDoubleBackward) {
  Var<double> x = Var<double>::parameter(Tensor<double>::full({1, 2, 2, 1}, 1.0), "x");
  Var<double> y = sum(square(upsample2x(x)));
  EXPECT_THROW(grad(y, {x}, {}, true), ContractError);
}

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  Rng rng(5);
  auto p = Var<float>::parameter(random_tensor({10}, rng).cast<float>(), "p");
  const Tensor<float> before = p.value();
  Adam<float> opt({p});
  p.mutable_grad() = Tensor<float>::zeros({10});
  opt.step();
  EXPECT_EQ(p.value(), before);
  EXPECT_EQ(opt.state().step, 1);
}

TEST(Adam, ConvergesOnQuadratic) {
  auto p = Var<double>::parameter(Tensor<double>::full({3}, 5.0), "p");
  Adam<double> opt({p}, {.learning_rate = 0.1});
  for (int i = 0; i < 500; ++i) {
    opt.zero_grad();
    backward(sum(square(p)), {p});
    opt.step();
  }
  EXPECT_LT(p.value().max_abs(), 1e-2);
}

TEST(Adam, FrozenParameterWithGradientAborts) {
  auto p = Var<float>::parameter(Tensor<float>::full({2}, 1.f), "frozen");
  Adam<float> opt({p});
  p.mutable_grad() = Tensor<float>::ones({2});
  p.set_requires_grad(false);
  EXPECT_THROW(opt.step(), ContractError);
}

TEST(Archive, RoundTripPreservesBitsAndConvertsDtype) {
  Rng rng(6);
  Tensor<double> a = random_tensor({3, 4}, rng);
  Tensor<float> b = random_tensor({5}, rng).cast<float>();
  const auto path = (std::filesystem::temp_directory_path() / "nvs_archive_test.bin").string();
  ArchiveWriter w;
  w.add("a", a);
  w.add("nested/b", b);
  w.set_meta("step", 12);
  w.write(path);
  ArchiveReader r(path);
  EXPECT_EQ(r.get<double>("a"), a);
  EXPECT_EQ(r.get<float>("nested/b"), b);
  EXPECT_EQ(r.get<double>("nested/b"), b.cast<double>());
  EXPECT_EQ(r.meta()["step"].get<int>(), 12);
  EXPECT_THROW(r.get<float>("missing"), CheckpointError);
  std::remove(path.c_str());
}

TEST(Archive, RejectsForeignFiles) {
  const auto path = (std::filesystem::temp_directory_path() / "nvs_not_archive.bin").string();
  {
    std::ofstream os(path);
    os << "hello world, definitely not an archive";
  }
  EXPECT_THROW(ArchiveReader{path}, CheckpointError);
  std::remove(path.c_str());
}

TEST(Rng, NamedStreamsAreIndependentAndReproducible) {
  SeedTree tree(42);
  Rng a1 = tree.stream("sampling"), a2 = tree.stream("sampling"), b = tree.stream("init");
  EXPECT_EQ(a1(), a2());
  EXPECT_NE(tree.stream("sampling")(), b());
}
