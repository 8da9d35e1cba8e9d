#include <doctest.h>

#include <cmath>
#include <random>

#include "cslab/autodiff/checkpoint.hpp"
#include "cslab/autodiff/gradcheck.hpp"
#include "cslab/autodiff/optim.hpp"
#include "cslab/util.hpp"
#include "oracles.hpp"

using namespace cslab;
using namespace cslab::ad;
using namespace cslab::testing;

namespace {

std::size_t dim(std::mt19937_64& rng) { return 1 + rng() % 8; }

}  // namespace

TEST_CASE("primitive forward examples") {
  auto r = relu(constant(Tensor<double>::vector({-1, 0, 2})));
  CHECK(r->value == Tensor<double>::vector({0, 0, 2}));
  auto s = softmax(constant(Tensor<double>::vector({0, 0})));
  CHECK(s->value[0] == doctest::Approx(0.5));
  CHECK(s->value[1] == doctest::Approx(0.5));
  auto m = matmul(constant(Tensor<double>({2, 3}, 1.0)), constant(Tensor<double>({3, 2}, 1.0)));
  CHECK(m->value == Tensor<double>({2, 2}, 3.0));
}

TEST_CASE("shape mismatch names the primitive and shapes") {
  auto a = constant(Tensor<double>({2, 3}));
  auto b = constant(Tensor<double>({2, 3}));
  try {
    matmul(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("matmul") != std::string::npos);
    CHECK(msg.find("(2x3)") != std::string::npos);
  }
  CHECK_THROWS_AS(add(a, constant(Tensor<double>({3, 2}))), ShapeError);
  CHECK_THROWS_AS(layer_norm(a, constant(Tensor<double>({2})), constant(Tensor<double>({2}))), ShapeError);
}

TEST_CASE("backward examples") {
  auto w = leaf(Tensor<double>::vector({0.3, -2, 5}));
  backward(sum(w));
  CHECK(w->grad == Tensor<double>::vector({1, 1, 1}));

  auto v = leaf(Tensor<double>::vector({3}));
  backward(sum(mul(v, v)));
  CHECK(v->grad[0] == doctest::Approx(6.0));

  auto used = leaf(Tensor<double>::vector({1, 2}));
  auto unused = leaf(Tensor<double>::vector({1, 2}));
  backward(sum(used));
  CHECK(unused->grad.empty());  // never reached: equivalent to a zero gradient

  CHECK_THROWS_AS(backward(used), ShapeError);
}

TEST_CASE("backward of a sum of losses equals the sum of backwards") {
  std::mt19937_64 rng(4);
  const Tensor<double> x0 = random_tensor({3, 4}, rng);
  auto loss1 = [](const Var<double>& x) { return sum(mul(x, x)); };
  auto loss2 = [](const Var<double>& x) { return mean(relu(x)); };

  auto joint = leaf(x0);
  backward(add(loss1(joint), loss2(joint)));
  auto split = leaf(x0);
  backward(loss1(split));
  backward(loss2(split));
  for (std::size_t i = 0; i < x0.size(); ++i) CHECK(joint->grad[i] == doctest::Approx(split->grad[i]).epsilon(1e-12));
}

TEST_CASE("grad_check examples") {
  std::mt19937_64 rng(5);
  std::vector<Tensor<double>> w{random_tensor({5}, rng)};
  auto sq = grad_check([](std::span<const Var<double>> p) { return sum(mul(p[0], p[0])); }, w);
  CHECK(sq.max_rel_error <= 1e-6);
  auto constant_fn = grad_check(
      [](std::span<const Var<double>>) { return constant(Tensor<double>::scalar(3.0)); }, w);
  CHECK(constant_fn.max_rel_error == 0.0);
  std::vector<Tensor<double>> kink{Tensor<double>::vector({0.0, 1.0, -1.0})};
  auto k = grad_check([](std::span<const Var<double>> p) { return sum(relu(p[0])); }, kink);
  CHECK(k.skipped_kinks == 1);
  CHECK(k.checked == 2);
  CHECK(k.max_rel_error <= 1e-6);
  std::vector<Tensor<double>> bad{Tensor<double>::vector({1.0})};
  CHECK_THROWS_AS(grad_check([](std::span<const Var<double>> p) { return scale(sum(p[0]), std::nan("")); }, bad),
                  NumericError);
}

TEST_CASE("every primitive passes grad_check on random shapes") {
  std::mt19937_64 rng(42);
  for (int trial = 0; trial < 12; ++trial) {
    CAPTURE(trial);
    const std::size_t m = dim(rng), k = dim(rng), n = dim(rng);
    const std::uint64_t s = rng();
    auto check = [&](const char* name, const LossFn& f, std::vector<Tensor<double>> params) {
      CAPTURE(name);
      CHECK(grad_check(f, params).max_rel_error <= 1e-4);
    };
    check("matmul", [s](auto p) { return probe_loss(matmul(p[0], p[1]), s); },
          {random_tensor({m, k}, rng), random_tensor({k, n}, rng)});
    check("matmul_nt", [s](auto p) { return probe_loss(matmul_nt(p[0], p[1]), s); },
          {random_tensor({m, k}, rng), random_tensor({n, k}, rng)});
    check("add", [s](auto p) { return probe_loss(add(p[0], p[1]), s); },
          {random_tensor({m, n}, rng), random_tensor({m, n}, rng)});
    check("add_row", [s](auto p) { return probe_loss(add(p[0], p[1]), s); },
          {random_tensor({m, n}, rng), random_tensor({n}, rng)});
    check("sub_row", [s](auto p) { return probe_loss(sub(p[0], p[1]), s); },
          {random_tensor({m, n}, rng), random_tensor({n}, rng)});
    check("mul", [s](auto p) { return probe_loss(mul(p[0], p[1]), s); },
          {random_tensor({m, n}, rng), random_tensor({m, n}, rng)});
    check("scale", [s](auto p) { return probe_loss(scale(p[0], 2.5), s); }, {random_tensor({m, n}, rng)});
    check("relu", [s](auto p) { return probe_loss(relu(p[0]), s); }, {random_tensor({m, n}, rng)});
    check("softmax", [s](auto p) { return probe_loss(softmax(p[0]), s); }, {random_tensor({m, n}, rng, -3, 3)});
    check("layer_norm", [s](auto p) { return probe_loss(layer_norm(p[0], p[1], p[2]), s); },
          {random_tensor({m, n + 1}, rng), random_tensor({n + 1}, rng), random_tensor({n + 1}, rng)});
    check("mean", [s](auto p) { return probe_loss(mean(p[0]), s); }, {random_tensor({m, n}, rng)});
    check("sum", [s](auto p) { return probe_loss(sum(p[0]), s); }, {random_tensor({m, n}, rng)});
    std::vector<std::int32_t> ids(m);
    for (auto& id : ids) id = static_cast<std::int32_t>(rng() % k);
    check("gather_rows", [s, ids](auto p) { return probe_loss(gather_rows(p[0], ids), s); },
          {random_tensor({k, n}, rng)});
    std::vector<std::int32_t> targets(m);
    for (auto& t : targets) t = static_cast<std::int32_t>(rng() % (n + 1)) - (rng() % 4 == 0 ? 100 : 0);
    for (auto& t : targets) t = t < 0 ? -1 : t;
    check("cross_entropy_with_logits", [targets](auto p) { return cross_entropy_with_logits(p[0], targets); },
          {random_tensor({m, n + 1}, rng, -2, 2)});
    const std::size_t heads = 1 + rng() % 2, hd = 1 + rng() % 3, batch = 1 + rng() % 2, seq = 1 + rng() % 4;
    check("causal_attention",
          [s, batch, seq, heads](auto p) { return probe_loss(causal_attention(p[0], p[1], p[2], batch, seq, heads), s); },
          {random_tensor({batch * seq, heads * hd}, rng), random_tensor({batch * seq, heads * hd}, rng),
           random_tensor({batch * seq, heads * hd}, rng)});
  }
}

TEST_CASE("causal attention matches a naive loop and ignores future tokens") {
  std::mt19937_64 rng(8);
  const std::size_t batch = 2, seq = 4, heads = 2, hd = 3, d = heads * hd;
  Tensor<double> q = random_tensor({batch * seq, d}, rng);
  const Tensor<double> k = random_tensor({batch * seq, d}, rng);
  const Tensor<double> v = random_tensor({batch * seq, d}, rng);
  auto attend = [&] { return causal_attention(constant(q), constant(k), constant(v), batch, seq, heads)->value; };
  const auto out = attend();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t i = 0; i < seq; ++i) {
        std::vector<double> w(i + 1);
        double mx = -1e300, total = 0;
        for (std::size_t j = 0; j <= i; ++j) {
          double dot = 0;
          for (std::size_t c = 0; c < hd; ++c) dot += q.at(b * seq + i, h * hd + c) * k.at(b * seq + j, h * hd + c);
          w[j] = dot / std::sqrt(double(hd));
          mx = std::max(mx, w[j]);
        }
        for (auto& v : w) total += (v = std::exp(v - mx));
        for (std::size_t c = 0; c < hd; ++c) {
          double o = 0;
          for (std::size_t j = 0; j <= i; ++j) o += w[j] / total * v.at(b * seq + j, h * hd + c);
          CHECK(out.at(b * seq + i, h * hd + c) == doctest::Approx(o).epsilon(1e-12));
        }
      }
    }
  }
  q.at(seq - 1, 0) += 5.0;  // perturb the last position of batch 0
  const auto out2 = attend();
  for (std::size_t i = 0; i + 1 < seq; ++i)
    for (std::size_t c = 0; c < d; ++c) CHECK(out2.at(i, c) == out.at(i, c));
}

TEST_CASE("cross entropy on uniform logits is ln V") {
  const std::vector<std::int32_t> targets{0, 3, -1};
  auto ce = cross_entropy_with_logits(constant(Tensor<double>({3, 7}, 0.25)), targets);
  CHECK(ce->value.item() == doctest::Approx(std::log(7.0)).epsilon(1e-12));
}

TEST_CASE("adam examples") {
  AdamConfig cfg;
  {
    Tensor<double> w = Tensor<double>::vector({1.0, -2.0});
    Tensor<double> g({2}, 0.0);
    AdamState<double> st;
    Tensor<double>* ps[] = {&w};
    const Tensor<double>* gs[] = {&g};
    adam_step<double>(ps, gs, st, cfg, 0.1);
    CHECK(w == Tensor<double>::vector({1.0, -2.0}));
  }
  {
    Tensor<double> w = Tensor<double>::vector({1.0});
    Tensor<double> g = Tensor<double>::vector({1.0});
    AdamState<double> st;
    Tensor<double>* ps[] = {&w};
    const Tensor<double>* gs[] = {&g};
    adam_step<double>(ps, gs, st, cfg, 0.1);
    CHECK(w[0] == doctest::Approx(0.9).epsilon(1e-6));
  }
  {
    AdamConfig decay = cfg;
    decay.weight_decay = 0.1;
    Tensor<double> w = Tensor<double>::vector({1.0});
    Tensor<double> g = Tensor<double>::vector({0.0});
    AdamState<double> st;
    Tensor<double>* ps[] = {&w};
    const Tensor<double>* gs[] = {&g};
    adam_step<double>(ps, gs, st, decay, 0.1);
    CHECK(w[0] == doctest::Approx(0.99).epsilon(1e-12));
  }
}

TEST_CASE("warmup then cosine schedule") {
  CHECK(warmup_cosine_lr(0, 1000, 100, 1.0) == doctest::Approx(0.01));
  CHECK(warmup_cosine_lr(99, 1000, 100, 1.0) == doctest::Approx(1.0));
  CHECK(warmup_cosine_lr(100, 1000, 100, 1.0) == doctest::Approx(1.0));
  CHECK(warmup_cosine_lr(550, 1000, 100, 1.0) == doctest::Approx(0.5));
  CHECK(warmup_cosine_lr(1000, 1000, 100, 1.0) == doctest::Approx(0.0));
}

TEST_CASE("checkpoint container round-trips with aligned offsets") {
  std::vector<NamedTensor> tensors{{"a", Tensor<float>({3}, 1.5f)}, {"b", Tensor<float>({2, 5}, -0.25f)},
                                   {"c", Tensor<float>::scalar(7.0f)}};
  tensors[1].tensor.at(1, 4) = 3.0f;
  const std::string bytes = encode_checkpoint(tensors);
  const auto back = decode_checkpoint(bytes);
  REQUIRE(back.size() == 3);
  CHECK(back[1].name == "b");
  CHECK(back[1].tensor == tensors[1].tensor);
  CHECK(back[2].tensor.item() == 7.0f);
  CHECK(bytes.find("\"offset\":64") != std::string::npos);
  CHECK(bytes.find("\"offset\":128") != std::string::npos);
  CHECK(encode_checkpoint(back) == bytes);
  CHECK_THROWS_AS(decode_checkpoint(bytes.substr(0, bytes.size() - 70)), ValidationError);
  CHECK_THROWS_AS(find_tensor(back, "zz"), ValidationError);
}
