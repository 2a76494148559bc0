#include "mha/stability.hpp"

#include <algorithm>
#include <cmath>

namespace mha {

namespace {

// plain GD on the (possibly leave-one-out) risk; skip = -1 keeps every sample.
// eta = 0 is allowed here (stationary runs have stability exactly 0).
GroupedParams run_gd(const Dataset& data, int skip, const GroupedParams& g0,
                     const TrainConfig& cfg) {
  if (cfg.eta == 0.0) {
    TrainConfig c = cfg;
    c.eta = 1.0;
    c.validate();
  } else {
    cfg.validate();
  }
  if (cfg.optimizer != Optimizer::kGd)
    throw ConfigError("stability: analysis is defined for plain GD");
  if (cfg.eta_rule != EtaRule::kExplicit)
    throw ConfigError("stability: resolve the step-size before the runs");
  GroupedParams g = g0;
  if (cfg.eta == 0.0) return g;
  for (int k = 0; k < cfg.K; ++k) {
    std::vector<HeadGradient> grads = grouped_risk_grad(data, g, cfg.threads, skip);
    for (int gi = 0; gi < g.G(); ++gi) {
      axpy(g.psi[gi].U, -cfg.eta, grads[gi].dU);
      axpy(g.psi[gi].W, -cfg.eta, grads[gi].dW);
    }
  }
  return g;
}

}  // namespace

GroupedParams loo_train(const Dataset& data, int i, const GroupedParams& g0,
                        const TrainConfig& cfg) {
  if (i < 0 || i >= data.n()) throw DimError("loo_train: sample index out of range");
  return run_gd(data, i, g0, cfg);
}

double beta1_tilde(double R, int T, double D, double m) {
  return std::sqrt(static_cast<double>(T)) * R * (2.0 * R * R * (3.0 * D + m) + 1.0);
}

StabilityReport avg_model_stability(const Dataset& data, const GroupedParams& g0,
                                    const TrainConfig& cfg, const Dataset& test,
                                    const GroupedParams& target) {
  if (cfg.eta == 0.0) {
    TrainConfig c = cfg;
    c.eta = 1.0;
    c.validate();
  } else {
    cfg.validate();
  }
  if (cfg.optimizer != Optimizer::kGd)
    throw ConfigError("avg_model_stability: stability analysis is defined for plain GD");
  if (cfg.eta_rule != EtaRule::kExplicit)
    throw ConfigError("avg_model_stability: resolve the step-size before the runs");
  StabilityReport rep;
  rep.eta = cfg.eta;
  rep.K = cfg.K;
  rep.n = data.n();

  GroupedParams full = run_gd(data, -1, g0, cfg);
  double s = 0;
  for (int i = 0; i < data.n(); ++i) s += grouped_dist(full, loo_train(data, i, g0, cfg));
  rep.avg_stability = s / data.n();

  rep.train_loss = grouped_risk(data, full, cfg.threads);
  rep.test_loss = grouped_risk(test, full, cfg.threads);
  rep.gap_estimate = rep.test_loss - rep.train_loss;

  rep.D = grouped_dist(target, g0);
  double m = grouped_maxnorm(target);
  rep.lipschitz_G = beta1_tilde(data.R, data.T, rep.D, m);
  rep.target_loss = grouped_risk(data, target, cfg.threads);
  // (2 eta G / n)(2 K Lhat + 9 D^2/(4 eta)) with the eta of the D^2 term
  // cancelled, so the bound stays finite in the eta -> 0 limit
  rep.stability_rhs = (4.0 * cfg.eta * rep.lipschitz_G * cfg.K * rep.target_loss +
                       4.5 * rep.lipschitz_G * rep.D * rep.D) /
                      data.n();
  rep.gap_rhs =
      (4.0 / data.n()) * (2.0 * cfg.K * rep.target_loss + 9.0 * rep.D * rep.D / (4.0 * cfg.eta));
  return rep;
}

ExpansivenessCheck expansiveness_step(const Dataset& data, int i, const GroupedParams& gk,
                                      const GroupedParams& gki, double eta, int grid) {
  if (grid < 2) throw DimError("expansiveness_step: grid >= 2 required");
  if (i < 0 || i >= data.n()) throw DimError("expansiveness_step: sample index out of range");
  ExpansivenessCheck chk;

  // one GD step of each trajectory
  GroupedParams gn = gk;
  std::vector<HeadGradient> grads = grouped_risk_grad(data, gk, 1);
  for (int gi = 0; gi < gn.G(); ++gi) {
    axpy(gn.psi[gi].U, -eta, grads[gi].dU);
    axpy(gn.psi[gi].W, -eta, grads[gi].dW);
  }
  GroupedParams gni = gki;
  std::vector<HeadGradient> grads_i = grouped_risk_grad(data, gki, 1, i);
  for (int gi = 0; gi < gni.G(); ++gi) {
    axpy(gni.psi[gi].U, -eta, grads_i[gi].dU);
    axpy(gni.psi[gi].W, -eta, grads_i[gi].dW);
  }
  chk.lhs = grouped_dist(gn, gni);

  double sqrtH = std::sqrt(gk.H);
  chk.factor = 0;
  for (int s = 0; s < grid; ++s) {
    double al = static_cast<double>(s) / (grid - 1);
    GroupedParams ga = gk;
    for (int gi = 0; gi < ga.G(); ++gi) {
      for (size_t j = 0; j < ga.psi[gi].U.a.size(); ++j)
        ga.psi[gi].U.a[j] = (1.0 - al) * gk.psi[gi].U.a[j] + al * gki.psi[gi].U.a[j];
      for (size_t j = 0; j < ga.psi[gi].W.a.size(); ++j)
        ga.psi[gi].W.a[j] = (1.0 - al) * gk.psi[gi].W.a[j] + al * gki.psi[gi].W.a[j];
    }
    LossBounds lb = grouped_loss_bounds(data.R, ga);
    double loo_risk = grouped_risk(data, ga, 1, i);
    double f = std::max(1.0 + eta * lb.loose.beta3 * loo_risk / sqrtH, eta * lb.loose.beta2);
    chk.factor = std::max(chk.factor, f);
  }

  double beta1_k = grouped_loss_bounds(data.R, gk).loose.beta1;
  const auto& e = data.examples[i];
  double loss_i = logistic(e.y * grouped_forward(e.x, gk)).loss;
  chk.inject = (eta * beta1_k / data.n()) * loss_i;
  chk.rhs = chk.factor * grouped_dist(gk, gki) + chk.inject;
  chk.holds = chk.lhs <= chk.rhs + 1e-12;
  return chk;
}

}  // namespace mha
