#pragma once

#include "mha/datagen.hpp"

namespace mha {

// target constructions for the tokenized mixture:
// U* = 1_T u*^T with u* = mu_+ - mu_-;  W* = mu_+ mu_+^T + mu_- mu_-^T + sum_l nu_l (mu_+ + mu_-)^T
struct TargetParams {
  Matrix U_star, W_star;
  Matrix U_bar, W_bar;  // unit Frobenius norm
  Matrix U_opt, W_opt;  // U*/(S sqrt(2T)), W*/(S^2 sqrt(2(M+1)))
  double U_star_F = 0, W_star_F = 0;
};

TargetParams make_targets(const MixtureSpec& spec);

// multi-head direction with ||theta|| = sqrt(2): head h = (U_bar, signs[h] W_bar)/sqrt(H)
ModelParams theta_star_direction(const TargetParams& t, const std::vector<int>& signs);

// t-th row of the softmax-logit matrix X W X^T
Vec relevance_scores(const TokenMatrix& x, const Matrix& W, int t);

// gamma_attn(eps) = (sqrt(T)/(sqrt(2) S)) (S^2 (1-eps) - 2 eps Z_mu)
double gamma_attn(double eps, double S, int T, double Z_mu);

// Gamma_eps = (8 sqrt(2(M+1)) / (3 S^2)) log((1/zeta - 1)/eps)
double saturation_gamma(double eps, double S, int M, double zeta);

// max over samples and rows t of sum_{t' not in R} softmax(X (Gamma W_opt) X^T)_{t,t'}
double verify_saturation(const Dataset& data, const std::vector<RelevantMask>& masks,
                         double Gamma, const Matrix& W_opt);

struct NtkMarginResult {
  double min_margin = 0;
  Vec per_sample;
};

// min_i y_i <grad Phi~(X_i; th0), th_star>; requires ||th_star|| = sqrt(2) within 1e-10
NtkMarginResult ntk_margin(const Dataset& data, const ModelParams& th0,
                           const ModelParams& th_star);

// gamma* = T(1-z)z (z S^4 - 7 Zb S^2 - 12 Zb^2 - 16 Zb^3/S^2) / (4 sqrt(2(M+1)))
//          - P T^{5/2} (S+Z)^3 + (S sqrt(T)/sqrt(2)) (z - 2(1-z) Z_mu/S^2),  Zb = Z_mu v Z_nu
double gamma_star(double S, int T, double zeta, int M, double Z_mu, double Z_nu, double Z,
                  double P);

struct GoodInitReport {
  double B2_emp = 0;     // max_h ||theta_h||  (P1)
  double B_phi_emp = 0;  // max_i |Phi~(X_i; theta_0)|  (P2)
  double ntk_margin_min = 0;  // P3 with the constructed theta*
  double gamma_star_formula = 0;
  double B2_theory = 0;     // sqrt(T) (S+P)
  double B_phi_theory = 0;  // T R (S+P) sqrt(2 log(n/delta))
  double P_used = 0;
  bool p1_pass = false, p2_pass = false, p3_pass = false;  // p3: margin >= gamma*/2
  std::vector<int> signs;   // per-head sign used on W_bar
};

GoodInitReport good_init_check(const Dataset& data, const ModelParams& th0, double delta,
                               const MixtureSpec& spec, const NoiseBounds& bounds, double P = 0);

struct RealizabilityWitness {
  double B2 = 0, B_phi = 0, gamma = 0;

  double g0(double eps) const;  // (2 B_phi + log(1/eps)) / gamma
  double g(double eps) const;   // B2 + g0(eps)
};

RealizabilityWitness realizability_witness(double B2, double B_phi, double gamma);

struct HeadRequirementInputs {
  double B2 = 0, B_phi = 0;
  double gamma = 0;       // good-initialization margin, used inside g0
  double gamma_star = 0;  // margin for the P3 head count; 0 means use 2*gamma
  double K = 1;           // horizon; eps = 1/K
  double n = 1;
  double delta = 0.05;
  int d = 0, T = 0;
  double R = 0;
  double S_plus_P = 0;
};

struct HeadRequirements {
  double H_train = 0, H_gen = 0, H_realiz = 0, H_P3 = 0;
  bool finite = true;
};

// minimal head counts (ceil of the squared sqrt(H) thresholds):
//   train:  sqrt(H) >= 36 d sqrt(Td) R^3 (3 sqrt(d) R^2 (4 g0 + B2) + 1) g0^2
//   gen:    sqrt(H) >= 256 d sqrt(Td) R^3 (B2 v 1) (3 sqrt(d) R^2 (4 g0 + B2) + 1) g0^2
//   realiz: sqrt(H) >= (5 d sqrt(Td) R^3 (B2 v 1) / B_phi) (3 sqrt(d) R^2 + 1) g0^2 (1 v g0)
//   P3:     sqrt(H) >= 4 (2 R^3 T (S+P) + sqrt(T) R) sqrt(2 log(n/delta)) / gamma*
// with g0 = (2 B_phi + log K) / gamma
HeadRequirements head_requirements(const HeadRequirementInputs& in);

// minimal H with sqrt(H) >= c d sqrt(Td) R^3 (3 sqrt(d) R^2 (3D + m) + 1) D^2
double h_train_theta_form(double D, double m, int d, int T, double R);  // c = 36
double h_gen_theta_form(double D, double m, int d, int T, double R);    // c = 256

}  // namespace mha
