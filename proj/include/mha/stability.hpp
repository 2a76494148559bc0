#pragma once

#include "mha/training.hpp"

namespace mha {

// K steps of GD on the leave-one-out risk (1/n normalization kept, sample i
// left out of the sum), started from the same g0
GroupedParams loo_train(const Dataset& data, int i, const GroupedParams& g0,
                        const TrainConfig& cfg);

// beta1 with the gen-theorem substitution m -> 3D + m:
// sqrt(T) R (2 R^2 (3D + m) + 1)
double beta1_tilde(double R, int T, double D, double m);

struct StabilityReport {
  double avg_stability = 0;  // (1/n) sum_i ||theta_K - theta_K^(-i)||
  double gap_estimate = 0;   // test risk - train risk at theta_K
  double lipschitz_G = 0;    // beta1~(theta_target)
  // (2 eta beta1~ / n)(2 K Lhat(target) + 9 D^2/(4 eta)), eta cancelled in the
  // D^2 term so it is finite at eta = 0
  double stability_rhs = 0;
  double gap_rhs = 0;  // (4/n)(2 K Lhat(target) + 9 D^2/(4 eta)); +inf at eta = 0
  double train_loss = 0, test_loss = 0;
  double target_loss = 0, D = 0;
  double eta = 0;
  int K = 0, n = 0;
};

// runs the full model and all n loo models from g0, then evaluates the
// stability and generalization quantities at the supplied target
StabilityReport avg_model_stability(const Dataset& data, const GroupedParams& g0,
                                    const TrainConfig& cfg, const Dataset& test,
                                    const GroupedParams& target);

struct ExpansivenessCheck {
  double lhs = 0;     // ||theta_{k+1} - theta_{k+1}^(-i)||
  double factor = 0;  // max over the segment grid of (1 + eta beta3 L^(-i)/sqrt(H)) v eta beta2
  double inject = 0;  // (eta beta1(theta_k)/n) * loss_i(theta_k)
  double rhs = 0;     // factor * ||theta_k - theta_k^(-i)|| + inject
  bool holds = false;
};

// one step of the GD-expansiveness recursion, with the segment maximum
// estimated on a grid between theta_k and theta_k^(-i)
ExpansivenessCheck expansiveness_step(const Dataset& data, int i, const GroupedParams& gk,
                                      const GroupedParams& gki, double eta, int grid = 101);

}  // namespace mha
