#include <doctest.h>

#include <cmath>
#include <vector>

#include "mha/stability.hpp"
#include "oracles.hpp"

using namespace mha;

namespace {

bool same_grouped(const GroupedParams& a, const GroupedParams& b) {
  if (a.G() != b.G()) return false;
  for (int g = 0; g < a.G(); ++g) {
    if (a.count[g] != b.count[g]) return false;
    for (size_t j = 0; j < a.psi[g].U.a.size(); ++j)
      if (a.psi[g].U.a[j] != b.psi[g].U.a[j]) return false;
    for (size_t j = 0; j < a.psi[g].W.a.size(); ++j)
      if (a.psi[g].W.a[j] != b.psi[g].W.a[j]) return false;
  }
  return true;
}

// one grouped GD step with an optional left-out sample
GroupedParams step_gd(const Dataset& data, const GroupedParams& g, double eta, int skip) {
  GroupedParams out = g;
  std::vector<HeadGradient> grads = grouped_risk_grad(data, g, 1, skip);
  for (int gi = 0; gi < out.G(); ++gi) {
    axpy(out.psi[gi].U, -eta, grads[gi].dU);
    axpy(out.psi[gi].W, -eta, grads[gi].dW);
  }
  return out;
}

TrainConfig gd_cfg(double eta, int K) {
  TrainConfig cfg;
  cfg.eta = eta;
  cfg.K = K;
  return cfg;
}

}  // namespace

TEST_CASE("loo_train: K=1 update algebra and index/config errors") {
  Rng rng(7);
  Dataset data = oracle::rand_dataset(rng, 5, 3, 6, 1.0);
  GroupedParams g0 = grouped_from_model(oracle::rand_model(rng, 5, 3, 2, 0.3));
  double eta = 0.4;

  GroupedParams full;
  train_grouped(data, g0, gd_cfg(eta, 1), {}, &full);
  GroupedParams loo = loo_train(data, 1, g0, gd_cfg(eta, 1));

  // theta1^{loo} - theta1 = (eta/n) grad l_1(theta0)
  Dataset only1 = Dataset::from({data.examples[1]});
  std::vector<HeadGradient> gl = grouped_risk_grad(only1, g0);
  for (int h = 0; h < 2; ++h) {
    for (size_t j = 0; j < gl[h].dU.a.size(); ++j) {
      double want = eta / 6.0 * gl[h].dU.a[j];
      CHECK(std::fabs(loo.psi[h].U.a[j] - full.psi[h].U.a[j] - want) <=
            1e-15 * std::max(1.0, std::fabs(want)));
    }
    for (size_t j = 0; j < gl[h].dW.a.size(); ++j) {
      double want = eta / 6.0 * gl[h].dW.a[j];
      CHECK(std::fabs(loo.psi[h].W.a[j] - full.psi[h].W.a[j] - want) <=
            1e-15 * std::max(1.0, std::fabs(want)));
    }
  }

  CHECK_THROWS_AS(loo_train(data, -1, g0, gd_cfg(eta, 1)), DimError);
  CHECK_THROWS_AS(loo_train(data, 6, g0, gd_cfg(eta, 1)), DimError);
  TrainConfig adam = gd_cfg(eta, 1);
  adam.optimizer = Optimizer::kAdam;
  CHECK_THROWS_AS(loo_train(data, 0, g0, adam), ConfigError);
  TrainConfig autorule = gd_cfg(eta, 1);
  autorule.eta_rule = EtaRule::kAutoTheorem;
  CHECK_THROWS_AS(loo_train(data, 0, g0, autorule), ConfigError);
  TrainConfig neg = gd_cfg(-0.1, 1);
  CHECK_THROWS_AS(loo_train(data, 0, g0, neg), ConfigError);
}

TEST_CASE("loo_train: removing an all-zero-token sample changes nothing, bitwise") {
  Rng rng(11);
  Dataset base = oracle::rand_dataset(rng, 5, 3, 7, 1.0);
  std::vector<LabeledExample> ex = base.examples;
  ex.push_back({TokenMatrix(Matrix(5, 3)), 1});  // gradient identically zero
  Dataset data = Dataset::from(std::move(ex));
  GroupedParams g0 = grouped_from_model(oracle::rand_model(rng, 5, 3, 2, 0.3));

  GroupedParams full;
  train_grouped(data, g0, gd_cfg(0.3, 4), {}, &full);
  GroupedParams loo = loo_train(data, 7, g0, gd_cfg(0.3, 4));
  CHECK(same_grouped(full, loo));
  CHECK(grouped_dist(full, loo) == 0.0);
}

TEST_CASE("loo_train: n=3 K=3 matches a from-scratch recomputation") {
  Rng rng(13);
  Dataset data = oracle::rand_dataset(rng, 5, 3, 3, 1.0);
  GroupedParams g0 = grouped_from_model(oracle::rand_model(rng, 5, 3, 2, 0.3));
  double eta = 0.25;

  GroupedParams loo = loo_train(data, 1, g0, gd_cfg(eta, 3));

  // same skip-based recursion, replayed by hand: must agree bitwise
  GroupedParams manual = g0;
  for (int k = 0; k < 3; ++k) manual = step_gd(data, manual, eta, 1);
  CHECK(same_grouped(loo, manual));

  // independent route: risk gradient of the 2-sample set, rescaled by 2/3 to
  // undo its 1/2 normalization (loo keeps 1/n = 1/3)
  Dataset two = Dataset::from({data.examples[0], data.examples[2]});
  GroupedParams indep = g0;
  for (int k = 0; k < 3; ++k) {
    std::vector<HeadGradient> gr = grouped_risk_grad(two, indep);
    for (int gi = 0; gi < indep.G(); ++gi) {
      axpy(indep.psi[gi].U, -eta * 2.0 / 3.0, gr[gi].dU);
      axpy(indep.psi[gi].W, -eta * 2.0 / 3.0, gr[gi].dW);
    }
  }
  for (int h = 0; h < 2; ++h) {
    for (size_t j = 0; j < loo.psi[h].U.a.size(); ++j)
      CHECK(loo.psi[h].U.a[j] ==
            doctest::Approx(indep.psi[h].U.a[j]).epsilon(1e-13));
    for (size_t j = 0; j < loo.psi[h].W.a.size(); ++j)
      CHECK(loo.psi[h].W.a[j] ==
            doctest::Approx(indep.psi[h].W.a[j]).epsilon(1e-13));
  }

  // determinism across repeated runs
  GroupedParams again = loo_train(data, 1, g0, gd_cfg(eta, 3));
  CHECK(same_grouped(loo, again));
}

TEST_CASE("beta1_tilde matches its formula and the m -> 3D+m substitution") {
  double R = 1.7, D = 0.4, m = 0.9;
  int T = 6;
  CHECK(beta1_tilde(R, T, D, m) ==
        std::sqrt(6.0) * R * (2.0 * R * R * (3.0 * D + m) + 1.0));
  // D = 0 reduces to the loose beta1 of loss_bounds at ||theta||_{2,inf} = m
  LossBounds lb = loss_bounds_raw(R, 6, 3, 2.0, m, m);
  CHECK(beta1_tilde(R, T, 0.0, m) == doctest::Approx(lb.loose.beta1).epsilon(1e-15));
}

TEST_CASE("avg_model_stability: eta=0 gives zero stability and identical models") {
  Rng rng(17);
  Dataset data = oracle::rand_dataset(rng, 5, 3, 4, 1.0);
  Dataset test = oracle::rand_dataset(rng, 5, 3, 5, 1.0);
  GroupedParams g0 = grouped_from_model(oracle::rand_model(rng, 5, 3, 2, 0.3));
  Rng rng2(18);
  GroupedParams target = grouped_from_model(oracle::rand_model(rng2, 5, 3, 2, 0.2));

  StabilityReport rep = avg_model_stability(data, g0, gd_cfg(0.0, 5), test, target);
  CHECK(rep.avg_stability == 0.0);
  CHECK(rep.gap_estimate == rep.test_loss - rep.train_loss);
  CHECK(rep.train_loss == grouped_risk(data, g0));
  CHECK(std::isfinite(rep.stability_rhs));
  CHECK(rep.stability_rhs ==
        doctest::Approx(4.5 * rep.lipschitz_G * rep.D * rep.D / 4.0).epsilon(1e-15));
  CHECK(std::isinf(rep.gap_rhs));  // the gap bound genuinely degenerates at eta = 0

  GroupedParams l0 = loo_train(data, 0, g0, gd_cfg(0.0, 5));
  CHECK(same_grouped(l0, g0));
}

TEST_CASE("avg_model_stability: n=2 single-step closed form") {
  Rng rng(19);
  Dataset data = oracle::rand_dataset(rng, 5, 3, 2, 1.0);
  Dataset test = oracle::rand_dataset(rng, 5, 3, 4, 1.0);
  GroupedParams g0 = grouped_from_model(oracle::rand_model(rng, 5, 3, 2, 0.3));
  double eta = 0.6;

  StabilityReport rep = avg_model_stability(data, g0, gd_cfg(eta, 1), test, g0);

  // ||theta1 - theta1^{-i}|| = (eta/2) ||grad l_i(theta0)||, averaged over i
  double acc = 0;
  for (int i = 0; i < 2; ++i) {
    Dataset di = Dataset::from({data.examples[i]});
    std::vector<HeadGradient> gi = grouped_risk_grad(di, g0);
    acc += eta / 2.0 * grad_norm_of(g0, gi);
  }
  CHECK(rep.avg_stability == doctest::Approx(acc / 2.0).epsilon(1e-12));
  CHECK(rep.D == 0.0);
  CHECK(rep.n == 2);
  CHECK(rep.K == 1);
  CHECK(rep.eta == eta);
}

TEST_CASE("avg_model_stability: every report field recomputes on a small run") {
  Rng rng(23);
  Dataset data = oracle::rand_dataset(rng, 5, 3, 6, 1.0);
  Dataset test = oracle::rand_dataset(rng, 5, 3, 8, 1.0);
  GroupedParams g0 = grouped_from_model(oracle::rand_model(rng, 5, 3, 2, 0.3));
  Rng rng2(24);
  GroupedParams target = grouped_from_model(oracle::rand_model(rng2, 5, 3, 2, 0.2));
  double eta = 0.05;
  int K = 3, n = 6;

  StabilityReport rep = avg_model_stability(data, g0, gd_cfg(eta, K), test, target);

  GroupedParams full = g0;
  for (int k = 0; k < K; ++k) full = step_gd(data, full, eta, -1);
  double s = 0;
  for (int i = 0; i < n; ++i) {
    GroupedParams gi = g0;
    for (int k = 0; k < K; ++k) gi = step_gd(data, gi, eta, i);
    s += grouped_dist(full, gi);
  }
  CHECK(rep.avg_stability == doctest::Approx(s / n).epsilon(1e-14));
  CHECK(rep.avg_stability >= 0.0);
  CHECK(rep.train_loss == grouped_risk(data, full));
  CHECK(rep.test_loss == grouped_risk(test, full));
  CHECK(rep.gap_estimate == rep.test_loss - rep.train_loss);
  CHECK(rep.D == grouped_dist(target, g0));
  CHECK(rep.target_loss == grouped_risk(data, target));
  CHECK(rep.lipschitz_G ==
        beta1_tilde(data.R, data.T, rep.D, grouped_maxnorm(target)));
  CHECK(rep.stability_rhs ==
        doctest::Approx((4.0 * eta * rep.lipschitz_G * K * rep.target_loss +
                         4.5 * rep.lipschitz_G * rep.D * rep.D) /
                        n)
            .epsilon(1e-15));
  CHECK(rep.gap_rhs ==
        doctest::Approx((4.0 / n) * (2.0 * K * rep.target_loss +
                                     9.0 * rep.D * rep.D / (4.0 * eta)))
            .epsilon(1e-15));

  TrainConfig bad = gd_cfg(eta, K);
  bad.optimizer = Optimizer::kGdMomentum;
  CHECK_THROWS_AS(avg_model_stability(data, g0, bad, test, target), ConfigError);
}

TEST_CASE("expansiveness_step: recursion holds along real loo trajectories") {
  Rng rng(29);
  Dataset data = oracle::rand_dataset(rng, 5, 3, 8, 1.0);
  GroupedParams g0 = grouped_from_model(oracle::rand_model(rng, 5, 3, 2, 0.2));
  double eta = 0.1;

  for (int i : {0, 5}) {
    GroupedParams gk = g0, gki = g0;
    for (int k = 0; k < 3; ++k) {
      ExpansivenessCheck chk = expansiveness_step(data, i, gk, gki, eta);
      CHECK(chk.holds);
      CHECK(chk.lhs >= 0.0);
      CHECK(chk.factor >= 1.0);  // grid includes alpha=0 where 1 + eta b3 L/sqrtH > 1
      CHECK(chk.rhs == chk.factor * grouped_dist(gk, gki) + chk.inject);

      double beta1_k = grouped_loss_bounds(data.R, gk).loose.beta1;
      const auto& e = data.examples[i];
      double li = logistic(e.y * grouped_forward(e.x, gk)).loss;
      CHECK(chk.inject == eta * beta1_k / 8.0 * li);

      GroupedParams gn = step_gd(data, gk, eta, -1);
      GroupedParams gni = step_gd(data, gki, eta, i);
      CHECK(chk.lhs == grouped_dist(gn, gni));
      gk = gn;
      gki = gni;
    }
  }

  // at k=0 the two iterates coincide: lhs = eta/n ||grad l_i||, rhs = inject
  ExpansivenessCheck first = expansiveness_step(data, 2, g0, g0, eta);
  CHECK(first.rhs == first.inject);
  CHECK(first.holds);

  CHECK_THROWS_AS(expansiveness_step(data, 2, g0, g0, eta, 1), DimError);
  CHECK_THROWS_AS(expansiveness_step(data, 8, g0, g0, eta), DimError);
  CHECK_THROWS_AS(expansiveness_step(data, -1, g0, g0, eta), DimError);
}
