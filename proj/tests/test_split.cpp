#include <doctest.h>

#include <set>
#include <sstream>

#include "oracles.hpp"
#include "splitrl/split.hpp"

using namespace splitrl;

namespace {

Eigen::MatrixXd random_grads(Eigen::Index n, Eigen::Index p, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> d(0.0, scale);
  Eigen::MatrixXd g(n, p);
  for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = d(rng);
  return g;
}

std::set<std::size_t> shared_set(const ShareMask& m) {
  std::set<std::size_t> s;
  for (std::size_t j = 0; j < m.size(); ++j) {
    if (m.is_shared(j)) s.insert(j);
  }
  return s;
}

/// First half identical across tasks, second half sign-flipped with magnitude >= 1.
Eigen::MatrixXd conflict_matrix(Eigen::Index n, Eigen::Index p, std::mt19937_64& rng) {
  std::normal_distribution<double> d(0.0, 1.0);
  Eigen::MatrixXd g(n, p);
  for (Eigen::Index j = 0; j < p / 2; ++j) {
    const double x = d(rng);
    g.col(j).setConstant(x);
  }
  for (Eigen::Index j = p / 2; j < p; ++j) {
    const double mag = 1.0 + std::abs(d(rng));
    for (Eigen::Index i = 0; i < n; ++i) g(i, j) = (i % 2 == 0 ? mag : -mag);
  }
  return g;
}

}  // namespace

TEST_CASE("metric reference values") {
  Eigen::MatrixXd g(2, 2);
  g << 1, 1, 1, 3;
  const auto v = specialization_metric(g);
  CHECK(v[0] == 0.0);
  CHECK(v[1] == 1.0);

  Eigen::MatrixXd h(3, 2);
  h << 1, 0, 2, 0, 3, 0;
  CHECK(specialization_metric(h)[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-15));

  CHECK_THROWS_AS(specialization_metric(Eigen::MatrixXd::Ones(1, 4)), std::invalid_argument);
}

TEST_CASE("metric is exactly zero for identical rows") {
  std::mt19937_64 rng(1);
  Eigen::MatrixXd g = random_grads(1, 300, rng).replicate(4, 1);
  CHECK(specialization_metric(g).isZero(0.0));
}

TEST_CASE("metric matches two-pass oracle") {
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<int> tasks(2, 5), size(1, 200);
  for (int trial = 0; trial < 100; ++trial) {
    const Eigen::MatrixXd g = random_grads(tasks(rng), size(rng), rng, trial % 3 == 0 ? 1e3 : 1.0);
    const double err = (specialization_metric(g) - oracle::column_variance(g)).cwiseAbs().maxCoeff();
    CHECK(err < 1e-12 * (trial % 3 == 0 ? 1e6 : 1.0));
  }
}

TEST_CASE("metric scales quadratically and the mask is scale invariant") {
  std::mt19937_64 rng(3);
  const Eigen::MatrixXd g = random_grads(3, 120, rng);
  const auto v = specialization_metric(g);
  const auto v3 = specialization_metric(3.0 * g);
  CHECK((v3 - 9.0 * v).cwiseAbs().maxCoeff() < 1e-12);
  for (std::size_t m : {0, 1, 17, 60, 119, 120}) CHECK(select_shared_mask(v, m) == select_shared_mask(v3, m));
}

TEST_CASE("accumulator") {
  MetricAccumulator two(2);
  two.push(Eigen::Vector2d(0, 2));
  CHECK_THROWS_AS(two.averaged(), std::logic_error);
  two.push(Eigen::Vector2d(2, 0));
  CHECK(two.averaged() == Eigen::VectorXd(Eigen::Vector2d(1, 1)));
  CHECK_THROWS_AS(two.push(Eigen::Vector2d(0, 0)), std::logic_error);

  MetricAccumulator same;
  std::mt19937_64 rng(4);
  const Eigen::VectorXd v = random_grads(1, 50, rng).row(0).transpose().cwiseAbs();
  for (int i = 0; i < 10; ++i) same.push(v);
  CHECK((same.averaged() - v).cwiseAbs().maxCoeff() < 1e-15);

  MetricAccumulator rnd;
  std::vector<Eigen::VectorXd> seen;
  for (int i = 0; i < 10; ++i) {
    seen.push_back(random_grads(1, 50, rng).row(0).transpose().cwiseAbs());
    rnd.push(seen.back());
  }
  for (Eigen::Index j = 0; j < 50; ++j) {
    double s = 0.0;
    for (const auto& x : seen) s += x[j];
    CHECK(std::abs(rnd.averaged()[j] - s / 10.0) < 1e-12);
  }
}

TEST_CASE("select_shared_mask") {
  CHECK(shared_set(select_shared_mask(Eigen::Vector3d(0.5, 0.1, 0.3), 2)) == std::set<std::size_t>{1, 2});
  CHECK(shared_set(select_shared_mask(Eigen::Vector3d(0.2, 0.2, 0.5), 1)) == std::set<std::size_t>{0});
  CHECK(select_shared_mask(Eigen::Vector3d(0.2, 0.2, 0.5), 3).shared_count() == 3);
  CHECK(select_shared_mask(Eigen::Vector3d(0.2, 0.2, 0.5), 0).shared_count() == 0);
  CHECK_THROWS_AS(select_shared_mask(Eigen::Vector3d(0.2, 0.2, 0.5), 4), std::invalid_argument);

  // Ties at the cut go to the lowest indices.
  Eigen::VectorXd flat = Eigen::VectorXd::Constant(10, 0.25);
  CHECK(shared_set(select_shared_mask(flat, 4)) == std::set<std::size_t>{0, 1, 2, 3});
}

TEST_CASE("conflicting half is specialized") {
  std::mt19937_64 rng(5);
  for (Eigen::Index n : {2, 3, 4}) {
    const Eigen::MatrixXd g = conflict_matrix(n, 64, rng);
    const ShareMask m = select_shared_mask(specialization_metric(g), 32);
    for (std::size_t j = 0; j < 64; ++j) CHECK(m.is_shared(j) == (j < 32));
  }
}

TEST_CASE("zero-variance windows share only zero-variance coordinates") {
  std::mt19937_64 rng(6);
  MetricAccumulator acc;
  for (int it = 0; it < 10; ++it) acc.push(specialization_metric(random_grads(1, 40, rng).replicate(3, 1)));
  CHECK(acc.averaged().isZero(0.0));
  for (std::size_t m : {0, 10, 40}) CHECK(select_shared_mask(acc.averaged(), m).shared_count() == m);
}

TEST_CASE("random_mask") {
  Rng rng(1);
  CHECK(random_mask(100, 1.0, rng).shared_count() == 100);
  CHECK(random_mask(100, 0.0, rng).shared_count() == 0);
  Rng a(42), b(42);
  const ShareMask ma = random_mask(1000, 0.75, a);
  CHECK(ma.shared_count() == 750);
  CHECK(ma == random_mask(1000, 0.75, b));
  CHECK_THROWS_AS(random_mask(10, 1.5, rng), std::invalid_argument);
}

TEST_CASE("masks partition the index set") {
  std::mt19937_64 rng(7);
  Rng r(7);
  for (int trial = 0; trial < 20; ++trial) {
    const auto v = specialization_metric(random_grads(3, 77, rng));
    for (const ShareMask& m : {select_shared_mask(v, static_cast<std::size_t>(trial) * 3), random_mask(77, 0.05 * trial, r)}) {
      std::size_t shared = 0, specialized = 0;
      for (std::size_t j = 0; j < m.size(); ++j) (m.is_shared(j) ? shared : specialized)++;
      CHECK(shared + specialized == 77);
      CHECK(shared == m.shared_count());
    }
  }
}

TEST_CASE("shared_count_for rounds (1 - sp) |theta|") {
  CHECK(shared_count_for(0.25, 1000) == 750);
  CHECK(shared_count_for(0.0, 17) == 17);
  CHECK(shared_count_for(1.0, 17) == 0);
  CHECK(shared_count_for(0.05, 8514) == 8088);
  CHECK_THROWS_AS(shared_count_for(-0.1, 10), std::invalid_argument);
}

TEST_CASE("split policy initialization and forward isolation") {
  const ParamLayout layout(2, {6}, 1, true);
  Rng init(8);
  const ParamVector joint = init_params(layout, init);
  std::vector<std::uint8_t> flags(layout.size(), 1);
  flags[0] = 0;  // first-layer weight, specialized
  flags[3] = 0;
  SplitPolicy sp(layout, ShareMask(flags), joint, 3);
  for (std::size_t t = 0; t < 3; ++t) CHECK(sp.materialize(t) == joint);

  const Eigen::Vector2d obs(0.3, -0.8);
  CHECK(split_forward(sp, 0, obs).mean == split_forward(sp, 2, obs).mean);
  CHECK_THROWS_AS(split_forward(sp, 3, obs), std::out_of_range);
  CHECK_THROWS_AS(SplitPolicy(layout, ShareMask(flags), joint, 0), std::invalid_argument);

  SUBCASE("perturbing a specialized weight of task 1 leaves task 0 alone") {
    sp.set_parameter(1, 0, joint[0] + 0.5);
    CHECK(split_forward(sp, 0, obs).mean == mlp_forward(joint, layout, obs));
    CHECK(split_forward(sp, 1, obs).mean != split_forward(sp, 0, obs).mean);
  }
  SUBCASE("perturbing a shared weight moves every task like a perturbed joint net") {
    ParamVector perturbed = joint;
    perturbed[5] += 0.5;
    sp.set_parameter(2, 5, perturbed[5]);
    const Eigen::VectorXd expected = mlp_forward(perturbed, layout, obs);
    for (std::size_t t = 0; t < 3; ++t) CHECK(split_forward(sp, t, obs).mean == expected);
  }
}

TEST_CASE("split_update arithmetic") {
  const ParamLayout layout(1, {}, 1, false);  // two parameters
  const ParamVector joint = ParamVector::Zero(2);
  std::vector<std::uint8_t> flags{1, 0};
  SplitPolicy sp(layout, ShareMask(flags), joint, 2);
  const AdamState fresh = AdamState::zeros(2, AdamConfig{1e-3});
  SplitOptimizer opt = SplitOptimizer::from_joint(fresh, 2);

  Eigen::MatrixXd g(2, 2);
  g << 1.0, 5.0, 3.0, 0.0;
  split_update(sp, opt, g);

  // The shared weight sees the mean gradient 2.
  ParamVector ref = joint;
  AdamState ref_state = fresh;
  adam_step(ref_state, ref, Eigen::Vector2d(2.0, 0.0));
  CHECK(sp.materialize(0)[0] == ref[0]);
  CHECK(sp.materialize(1)[0] == ref[0]);
  CHECK(opt.shared.first_moment[0] == ref_state.first_moment[0]);
  // Only task 0's copy of the specialized weight moves.
  CHECK(sp.materialize(0)[1] < 0.0);
  CHECK(sp.materialize(1)[1] == 0.0);

  Eigen::MatrixXd bad = g;
  bad(1, 0) = std::numeric_limits<double>::infinity();
  const ParamVector before0 = sp.materialize(0), before1 = sp.materialize(1);
  CHECK_THROWS_AS(split_update(sp, opt, bad), std::runtime_error);
  CHECK(sp.materialize(0) == before0);
  CHECK(sp.materialize(1) == before1);
}

TEST_CASE("shared coordinates stay tied under random updates") {
  const ParamLayout layout(3, {8, 8}, 2, true);
  Rng init(9), mrng(10);
  std::mt19937_64 rng(11);
  SplitPolicy sp(layout, random_mask(layout.size(), 0.6, mrng), init_params(layout, init), 3);
  SplitOptimizer opt = SplitOptimizer::from_joint(AdamState::zeros(layout.size()), 3);
  for (int step = 0; step < 50; ++step) split_update(sp, opt, random_grads(3, static_cast<Eigen::Index>(layout.size()), rng));
  const ParamVector t0 = sp.materialize(0), t1 = sp.materialize(1), t2 = sp.materialize(2);
  std::size_t diverged = 0;
  for (std::size_t j = 0; j < layout.size(); ++j) {
    const auto i = static_cast<Eigen::Index>(j);
    if (sp.mask().is_shared(j)) {
      CHECK(t0[i] == t1[i]);
      CHECK(t0[i] == t2[i]);
    } else if (t0[i] != t1[i]) {
      ++diverged;
    }
  }
  CHECK(diverged == layout.size() - sp.mask().shared_count());
}

TEST_CASE("all-shared split policy follows single-network Adam bitwise") {
  const ParamLayout layout(3, {8, 8}, 2, true);
  Rng init(12);
  std::mt19937_64 rng(13);
  ParamVector joint = init_params(layout, init);
  SplitPolicy sp(layout, ShareMask::all_shared(layout.size()), joint, 4);
  AdamState single = AdamState::zeros(layout.size());
  SplitOptimizer opt = SplitOptimizer::from_joint(single, 4);
  for (int step = 0; step < 50; ++step) {
    const Eigen::VectorXd g = random_grads(1, static_cast<Eigen::Index>(layout.size()), rng).row(0).transpose();
    adam_step(single, joint, g);
    split_update(sp, opt, g.transpose().replicate(4, 1));
    for (std::size_t t = 0; t < 4; ++t) REQUIRE(sp.materialize(t) == joint);
  }
}

TEST_CASE("none-shared split policy gives independent vectors") {
  const ParamLayout layout(2, {4}, 1, true);
  Rng init(14);
  std::mt19937_64 rng(15);
  const ParamVector joint = init_params(layout, init);
  SplitPolicy sp(layout, ShareMask::none_shared(layout.size()), joint, 2);
  SplitOptimizer opt = SplitOptimizer::from_joint(AdamState::zeros(layout.size()), 2);
  split_update(sp, opt, random_grads(2, static_cast<Eigen::Index>(layout.size()), rng));
  const ParamVector a = sp.materialize(0), b = sp.materialize(1);
  for (Eigen::Index j = 0; j < a.size(); ++j) CHECK(a[j] != b[j]);
}

TEST_CASE("task_gradient") {
  const ParamLayout layout(3, {6}, 2, true);
  Rng init(16);
  std::mt19937_64 rng(17);
  const ParamVector p = init_params(layout, init);
  RolloutBatch b = oracle::random_batch(p, layout, 32, rng);
  PPOConfig cfg;

  SUBCASE("zero advantages give a zero gradient") {
    std::fill(b.advantages.begin(), b.advantages.end(), 0.0);
    CHECK(task_gradient(p, layout, b, cfg).isZero(0.0));
  }
  SUBCASE("duplicating the batch leaves the gradient unchanged") {
    RolloutBatch twice = b;
    twice.observations.conservativeResize(Eigen::NoChange, 64);
    twice.observations.rightCols(32) = b.observations;
    twice.policy_inputs = twice.observations;
    twice.actions.conservativeResize(Eigen::NoChange, 64);
    twice.actions.rightCols(32) = b.actions;
    for (auto* v : {&twice.old_logprobs, &twice.advantages, &twice.rewards, &twice.returns}) {
      const auto copy = *v;
      v->insert(v->end(), copy.begin(), copy.end());
    }
    twice.dones.insert(twice.dones.end(), b.dones.begin(), b.dones.end());
    twice.terminals.insert(twice.terminals.end(), b.terminals.begin(), b.terminals.end());
    const auto g1 = task_gradient(p, layout, b, cfg);
    const auto g2 = task_gradient(p, layout, twice, cfg);
    CHECK((g1 - g2).cwiseAbs().maxCoeff() < 1e-14);
  }
  SUBCASE("matches finite differences of the surrogate") {
    ParamVector q = p;
    std::normal_distribution<double> n(0.0, 0.1);
    for (Eigen::Index i = 0; i < q.size(); ++i) q[i] += n(rng);
    const auto f = [&](const Eigen::VectorXd& x) { return ppo_loss(x, layout, b, cfg.clip_epsilon); };
    CHECK(oracle::max_rel_error(task_gradient(q, layout, b, cfg), oracle::finite_diff(f, q)) < 1e-4);
  }
  SUBCASE("empty batch is rejected") {
    CHECK_THROWS_AS(task_gradient(p, layout, RolloutBatch{}, cfg), std::invalid_argument);
  }
}

TEST_CASE("mask artifact round trip") {
  std::mt19937_64 rng(18);
  const auto v = specialization_metric(random_grads(3, 25, rng));
  const ShareMask m = select_shared_mask(v, 10);
  std::stringstream ss;
  write_mask_artifact(ss, m, v);
  const std::string text = ss.str();
  CHECK(text.rfind("0 ", 0) == 0);
  const MaskArtifact back = read_mask_artifact(ss);
  CHECK(back.mask == m);
  CHECK(back.variance == v);

  std::istringstream bad("0 0.5 1\n2 0.1 0\n");
  CHECK_THROWS(read_mask_artifact(bad));
}
