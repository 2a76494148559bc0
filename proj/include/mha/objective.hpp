#pragma once

#include <functional>
#include <string>

#include "mha/calculus.hpp"

namespace mha {

struct Dataset {
  std::vector<LabeledExample> examples;
  double R = 0;  // max token norm, recomputed
  int T = 0, d = 0;

  static Dataset from(std::vector<LabeledExample> ex);
  int n() const { return static_cast<int>(examples.size()); }
};

struct Logistic {
  double loss, d1, d2;
};

// log(1 + e^{-t}) with stable branches; d1 = -1/(1+e^t); d2 = e^t/(1+e^t)^2
Logistic logistic(double t);

double empirical_risk(const Dataset& data, const ModelParams& th, int threads = 1);

// gradient of the empirical risk in ModelParams shape
ModelParams risk_gradient(const Dataset& data, const ModelParams& th, int threads = 1);

// Hessian action on a ModelParams-shaped direction
ModelParams risk_hvp(const Dataset& data, const ModelParams& th, const ModelParams& v);

// dense loss Hessian; requires H(Td+d^2) <= 2000
Matrix risk_hessian_dense(const Dataset& data, const ModelParams& th);

struct BetaSet {
  double beta1 = 0, beta2 = 0, beta3 = 0, kappa = 0;  // kappa = beta3/sqrt(H)
};

// beta1 = sqrt(T) R (2 R^2 m + 1); beta3 = 2 d sqrt(Td) R^3 (3 sqrt(d) R^2 m + 1);
// beta2 = beta3/sqrt(H) + beta1^2/4
BetaSet beta_set(double R, int T, int d, double H, double m);

struct LossBounds {
  BetaSet loose;  // m = ||theta||_{2,inf}
  BetaSet tight;  // m = max_h ||U_h||_F
  double R = 0;
  bool r_ge_1 = true;  // theorems assume R >= 1; flag when violated
};

LossBounds loss_bounds(double R, const ModelParams& th);
// scale-free core used by grouped training as well
LossBounds loss_bounds_raw(double R, int T, int d, double H, double m_loose, double m_tight);

// alpha(theta) = 3 d sqrt(d) R^2 [3 sqrt(T) R^3 (3||theta-theta0|| + ||theta||_{2,inf})
//                                + 2 sqrt(T) R]
double alpha_of(double R, int T, int d, double dist, double maxnorm);
// rho(theta) = (2 d sqrt(Td) R^3/sqrt(H) + T R^2/4) alpha(theta)^2
double rho_of(double R, int T, int d, double H, double dist, double maxnorm);
double rho(const ModelParams& th_target, const ModelParams& th0, double R);

struct GlqcResult {
  bool condition_holds = false;    // 2 (beta3(th1) v beta3(th2)) ||th1-th2||^2 <= sqrt(H)
  bool conclusion_holds = false;   // segment max <= (4/3) endpoint max on the grid
  double segment_max = 0, endpoint_max = 0, ratio = 0;
  double condition_lhs = 0, sqrt_H = 0;
};

GlqcResult glqc_check(const Dataset& data, const ModelParams& th1, const ModelParams& th2,
                      int grid = 101);

struct LossReport {
  double value = 0, grad_norm = 0;
  double beta1 = 0, beta2 = 0, beta3 = 0, kappa = 0, rho = 0;
};

LossReport loss_report(const Dataset& data, const ModelParams& th, const ModelParams& th0,
                       int threads = 1);
std::string loss_report_csv_header();
std::string loss_report_csv_row(const LossReport& r);

// deterministic reduction helpers: fixed 32-sample chunks combined by a
// pairwise tree, so results do not depend on the thread count
double parallel_sum(int n, const std::function<double(int)>& f, int threads);
void parallel_accumulate(int n, int dim, const std::function<void(int, Vec&)>& add_into,
                         Vec& out, int threads);

}  // namespace mha
