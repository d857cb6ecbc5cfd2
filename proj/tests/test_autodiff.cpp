#include <catch2/catch_amalgamated.hpp>

#include "poserec/autodiff.hpp"
#include "poserec/gradcheck.hpp"
#include "poserec/optim.hpp"
#include "poserec/rng.hpp"

using namespace poserec;

namespace {

void fill_normal(Tensor& t, std::mt19937_64& g, double scale = 1.0) {
  for (double& v : t.data()) v = scale * rng::normal(g);
}

// Keeps values away from kinks (relu at 0, ties in max/min).
void fill_away_from_zero(Tensor& t, std::mt19937_64& g, double margin = 0.05) {
  for (double& v : t.data()) {
    do {
      v = rng::normal(g);
    } while (std::abs(v) < margin);
  }
}

Parameter& make_param(ParamStore& store, const std::string& name,
                      std::vector<std::size_t> dims, std::mt19937_64& g,
                      bool away_from_zero = false) {
  Parameter& p = store.create(name, std::move(dims));
  if (away_from_zero) {
    fill_away_from_zero(p.value, g);
  } else {
    fill_normal(p.value, g);
  }
  return p;
}

// One stop for the per-op finite-difference property: every differentiable op
// gets checked against central differences on repeated random seeds.
template <typename BuildFn>
void check_op_gradients(const std::string& label, int seeds, BuildFn&& make_case,
                        double tol = 1e-6) {
  for (int s = 0; s < seeds; ++s) {
    auto g = rng::engine(rng::derive(2024, label, static_cast<std::uint64_t>(s)));
    ParamStore store;
    auto build = make_case(store, g);
    GradcheckOptions opts;
    opts.tolerance = tol;
    opts.max_entries_per_param = 64;
    auto report = gradcheck(store, build, opts);
    INFO(label << " seed " << s << " max rel err " << report.max_rel_err);
    REQUIRE(report.ok);
  }
}

}  // namespace

TEST_CASE("matmul backward matches dA = dC Bt and dB = At dC") {
  auto g = rng::engine(3);
  Tensor a({3, 4});
  Tensor b({4, 2});
  Tensor w({3, 2});
  fill_normal(a, g);
  fill_normal(b, g);
  fill_normal(w, g);

  ParamStore store;
  Parameter& pa = store.create("a", {3, 4});
  Parameter& pb = store.create("b", {4, 2});
  pa.value = a;
  pb.value = b;

  Tape tape;
  auto c = tape.matmul(tape.param(pa), tape.param(pb));
  tape.backward(tape.weighted_sum(c, w));

  // dC is w itself; the formulas below are the contract from first principles.
  Tensor da({3, 4});
  detail::mm_abt_accum(w.raw(), b.raw(), da.raw(), 3, 2, 4);
  Tensor db({4, 2});
  detail::mm_atb_accum(a.raw(), w.raw(), db.raw(), 4, 3, 2);
  for (std::size_t i = 0; i < da.size(); ++i) CHECK(pa.grad[i] == Catch::Approx(da[i]).epsilon(1e-12));
  for (std::size_t i = 0; i < db.size(); ++i) CHECK(pb.grad[i] == Catch::Approx(db[i]).epsilon(1e-12));
}

TEST_CASE("per-op finite difference agreement over random seeds") {
  const int kSeeds = 100;

  check_op_gradients("matmul", kSeeds, [](ParamStore& s, std::mt19937_64& g) {
    auto& a = make_param(s, "a", {3, 4}, g);
    auto& b = make_param(s, "b", {4, 2}, g);
    Tensor w({3, 2});
    fill_normal(w, g);
    return [&, w](Tape& t) { return t.weighted_sum(t.matmul(t.param(a), t.param(b)), w); };
  });

  check_op_gradients("add_sub_scale", kSeeds, [](ParamStore& s, std::mt19937_64& g) {
    auto& a = make_param(s, "a", {5}, g);
    auto& b = make_param(s, "b", {5}, g);
    Tensor w({5});
    fill_normal(w, g);
    return [&, w](Tape& t) {
      auto x = t.scale(t.sub(t.add(t.param(a), t.param(b)), t.param(b)), 1.7);
      return t.weighted_sum(t.add(x, t.param(b)), w);
    };
  });

  check_op_gradients("relu", kSeeds, [](ParamStore& s, std::mt19937_64& g) {
    auto& a = make_param(s, "a", {12}, g, /*away_from_zero=*/true);
    Tensor w({12});
    fill_normal(w, g);
    return [&, w](Tape& t) { return t.weighted_sum(t.relu(t.param(a)), w); };
  });

  check_op_gradients("affine", kSeeds, [](ParamStore& s, std::mt19937_64& g) {
    auto& w = make_param(s, "w", {4, 6}, g);
    auto& x = make_param(s, "x", {6}, g);
    auto& b = make_param(s, "b", {4}, g);
    Tensor wt({4});
    fill_normal(wt, g);
    return [&, wt](Tape& t) {
      return t.weighted_sum(t.affine(t.param(w), t.param(x), t.param(b)), wt);
    };
  });

  check_op_gradients("spatial_gcn", kSeeds, [](ParamStore& s, std::mt19937_64& g) {
    auto& x = make_param(s, "x", {3, 4, 5}, g);
    auto& w = make_param(s, "w", {3, 2}, g);
    Tensor adj({5, 5});
    fill_normal(adj, g);
    Tensor wt({2, 4, 5});
    fill_normal(wt, g);
    return [&, adj, wt](Tape& t) {
      return t.weighted_sum(t.spatial_gcn(t.param(x), t.input(adj), t.param(w)), wt);
    };
  });

  check_op_gradients("temporal_conv_s1", kSeeds, [](ParamStore& s, std::mt19937_64& g) {
    auto& x = make_param(s, "x", {2, 7, 3}, g);
    auto& w = make_param(s, "w", {2, 3}, g);
    auto& b = make_param(s, "b", {2}, g);
    Tensor wt({2, 7, 3});
    fill_normal(wt, g);
    return [&, wt](Tape& t) {
      return t.weighted_sum(t.temporal_conv(t.param(x), t.param(w), t.param(b), 1), wt);
    };
  });

  check_op_gradients("temporal_conv_s2", kSeeds, [](ParamStore& s, std::mt19937_64& g) {
    auto& x = make_param(s, "x", {2, 7, 3}, g);
    auto& w = make_param(s, "w", {2, 5}, g);
    auto& b = make_param(s, "b", {2}, g);
    Tensor wt({2, 4, 3});
    fill_normal(wt, g);
    return [&, wt](Tape& t) {
      return t.weighted_sum(t.temporal_conv(t.param(x), t.param(w), t.param(b), 2), wt);
    };
  });

  check_op_gradients("mean_pool_tn", kSeeds, [](ParamStore& s, std::mt19937_64& g) {
    auto& x = make_param(s, "x", {4, 3, 5}, g);
    Tensor wt({4});
    fill_normal(wt, g);
    return [&, wt](Tape& t) { return t.weighted_sum(t.mean_pool_tn(t.param(x)), wt); };
  });

  check_op_gradients("chunk", kSeeds, [](ParamStore& s, std::mt19937_64& g) {
    auto& x = make_param(s, "x", {8}, g);
    Tensor wt({3});
    fill_normal(wt, g);
    return [&, wt](Tape& t) { return t.weighted_sum(t.chunk(t.param(x), 2, 3), wt); };
  });

  check_op_gradients("softmax", kSeeds, [](ParamStore& s, std::mt19937_64& g) {
    auto& x = make_param(s, "x", {6}, g);
    Tensor wt({6});
    fill_normal(wt, g);
    return [&, wt](Tape& t) { return t.weighted_sum(t.softmax(t.param(x)), wt); };
  });

  check_op_gradients("cosine", kSeeds, [](ParamStore& s, std::mt19937_64& g) {
    auto& a = make_param(s, "a", {5}, g);
    auto& b = make_param(s, "b", {5}, g);
    return [&](Tape& t) { return t.cosine(t.param(a), t.param(b)); };
  });

  check_op_gradients("dot", kSeeds, [](ParamStore& s, std::mt19937_64& g) {
    auto& a = make_param(s, "a", {5}, g);
    auto& b = make_param(s, "b", {5}, g);
    return [&](Tape& t) { return t.dot(t.param(a), t.param(b)); };
  });

  check_op_gradients("stack_sum_extrema", kSeeds, [](ParamStore& s, std::mt19937_64& g) {
    auto& a = make_param(s, "a", {4}, g, /*away_from_zero=*/true);
    auto& b = make_param(s, "b", {4}, g, /*away_from_zero=*/true);
    return [&](Tape& t) {
      auto sims = t.stack({t.cosine(t.param(a), t.param(b)), t.dot(t.param(a), t.param(b)),
                           t.weighted_sum(t.param(a), Tensor({4}, {1, 2, 3, 4}))});
      return t.sum({t.max_elem(sims), t.min_elem(sims)});
    };
  });

  check_op_gradients("bce_with_logits", kSeeds, [](ParamStore& s, std::mt19937_64& g) {
    auto& x = make_param(s, "x", {6}, g);
    Tensor targets({6});
    for (double& v : targets.data()) v = rng::uniform01(g);
    return [&, targets](Tape& t) { return t.bce_with_logits(t.param(x), targets); };
  });

  check_op_gradients("factor_merge", kSeeds, [](ParamStore& s, std::mt19937_64& g) {
    auto& w = make_param(s, "w", {5}, g);
    Tensor factors({5, 7});
    fill_normal(factors, g);
    Tensor wt({7});
    fill_normal(wt, g);
    return [&, factors, wt](Tape& t) {
      return t.weighted_sum(t.factor_merge(t.param(w), t.input(factors), 0x17u), wt);
    };
  });
}

TEST_CASE("factor_merge rejects an all-masked item") {
  ParamStore store;
  auto g = rng::engine(5);
  auto& w = make_param(store, "w", {3}, g);
  Tape tape;
  CHECK_THROWS_AS(tape.factor_merge(tape.param(w), tape.input(Tensor({3, 4})), 0u), DataError);
}

TEST_CASE("adam leaves values unchanged under zero gradients") {
  ParamStore store;
  auto g = rng::engine(17);
  auto& p = make_param(store, "p", {6}, g);
  Tensor before = p.value;
  Adam opt(AdamConfig{.lr = 1e-2});
  opt.step(store);
  for (std::size_t i = 0; i < before.size(); ++i) CHECK(p.value[i] == before[i]);
}

TEST_CASE("adam first step matches closed form") {
  ParamStore store;
  Parameter& p = store.create("theta", {1});
  p.grad[0] = 1.0;
  Adam opt(AdamConfig{.lr = 1e-4});
  opt.step(store);
  // first step is -lr * g / (sqrt(g^2) + eps)
  CHECK(std::abs(p.value[0] + 1e-4) < 1e-8);
  CHECK(p.grad[0] == 0.0);  // grads zeroed afterward
}

TEST_CASE("adam five-step trace matches scalar reference") {
  // Hand-rolled scalar Adam as the oracle.
  const double lr = 1e-2, b1 = 0.9, b2 = 0.999, eps = 1e-8, l2 = 1e-3;
  double theta = 0.7, m = 0.0, v = 0.0;
  auto grad_fn = [](double x) { return 2.0 * (x - 0.3); };

  ParamStore store;
  Parameter& p = store.create("theta", {1});
  p.value[0] = 0.7;
  Adam opt(AdamConfig{.lr = lr, .beta1 = b1, .beta2 = b2, .eps = eps, .l2 = l2});

  for (int t = 1; t <= 5; ++t) {
    const double g_oracle = grad_fn(theta) + l2 * theta;
    m = b1 * m + (1 - b1) * g_oracle;
    v = b2 * v + (1 - b2) * g_oracle * g_oracle;
    const double mhat = m / (1 - std::pow(b1, t));
    const double vhat = v / (1 - std::pow(b2, t));
    theta -= lr * mhat / (std::sqrt(vhat) + eps);

    p.grad[0] = grad_fn(p.value[0]);
    opt.step(store);
    CHECK(std::abs(p.value[0] - theta) < 1e-10);
  }
}

TEST_CASE("adam update is independent of registration order") {
  auto g = rng::engine(29);
  Tensor va({4}), vb({7}), ga({4}), gb({7});
  fill_normal(va, g);
  fill_normal(vb, g);
  fill_normal(ga, g);
  fill_normal(gb, g);

  ParamStore s1, s2;
  Parameter& a1 = s1.create("a", {4});
  Parameter& b1 = s1.create("b", {7});
  Parameter& b2 = s2.create("b", {7});
  Parameter& a2 = s2.create("a", {4});
  a1.value = va; a2.value = va;
  b1.value = vb; b2.value = vb;

  Adam o1(AdamConfig{.lr = 1e-3, .l2 = 1e-4});
  Adam o2(AdamConfig{.lr = 1e-3, .l2 = 1e-4});
  for (int step = 0; step < 3; ++step) {
    a1.grad = ga; a2.grad = ga;
    b1.grad = gb; b2.grad = gb;
    o1.step(s1);
    o2.step(s2);
  }
  for (std::size_t i = 0; i < va.size(); ++i) CHECK(a1.value[i] == a2.value[i]);
  for (std::size_t i = 0; i < vb.size(); ++i) CHECK(b1.value[i] == b2.value[i]);
}

TEST_CASE("gradcheck accepts the quadratic loss") {
  ParamStore store;
  auto g = rng::engine(31);
  auto& p = make_param(store, "theta", {9}, g);
  auto build = [&](Tape& t) { return t.scale(t.dot(t.param(p), t.param(p)), 0.5); };
  GradcheckOptions opts;
  opts.tolerance = 1e-9;
  opts.max_entries_per_param = 9;
  auto report = gradcheck(store, build, opts);
  CHECK(report.ok);
  CHECK(report.max_rel_err < 1e-9);
}

TEST_CASE("gradcheck flags a sign-flipped gradient") {
  ParamStore store;
  auto g = rng::engine(37);
  auto& p = make_param(store, "theta", {5}, g);
  auto loss = [&]() {
    Tape t;
    return t.value(t.scale(t.dot(t.param(p), t.param(p)), 0.5))[0];
  };
  std::vector<Tensor> corrupted;
  Tensor flipped = p.value;
  for (double& v : flipped.data()) v = -v;  // true gradient is theta itself
  corrupted.push_back(flipped);
  auto report = gradcheck_against(store, corrupted, loss, GradcheckOptions{});
  CHECK_FALSE(report.ok);
  CHECK(report.max_rel_err > 0.1);
}

TEST_CASE("gradcheck detects a nondeterministic closure") {
  ParamStore store;
  Parameter& p = store.create("theta", {2});
  p.value[0] = 1.0;
  int calls = 0;
  auto build = [&](Tape& t) {
    ++calls;
    return t.scale(t.dot(t.param(p), t.param(p)), 0.5 + 1e-3 * calls);
  };
  CHECK_THROWS_AS(gradcheck(store, build, GradcheckOptions{}), NumericError);
}

TEST_CASE("backward requires a scalar root") {
  ParamStore store;
  auto g = rng::engine(41);
  auto& p = make_param(store, "p", {2, 2}, g);
  Tape t;
  auto id = t.param(p);
  CHECK_THROWS_AS(t.backward(id), ShapeError);
}

TEST_CASE("tape keeps gradients finite on finite inputs") {
  auto g = rng::engine(43);
  ParamStore store;
  auto& a = make_param(store, "a", {16}, g);
  auto& b = make_param(store, "b", {16}, g);
  Tape t;
  auto c = t.cosine(t.param(a), t.param(b));
  auto s = t.softmax(t.stack({c, t.scale(c, -2.0), t.dot(t.param(a), t.param(b))}));
  t.backward(t.weighted_sum(s, Tensor({3}, {1, 2, 3})));
  CHECK(a.grad.all_finite());
  CHECK(b.grad.all_finite());
}
