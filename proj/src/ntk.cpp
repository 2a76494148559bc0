#include "mha/ntk.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace mha {

TargetParams make_targets(const MixtureSpec& spec) {
  spec.validate();
  int T = spec.T, d = spec.d, M = spec.M;
  Vec mup = spec.mu_plus(), mum = spec.mu_minus();
  Vec ustar(d), musum(d);
  for (int c = 0; c < d; ++c) {
    ustar[c] = mup[c] - mum[c];
    musum[c] = mup[c] + mum[c];
  }
  TargetParams t;
  t.U_star = Matrix(T, d);
  for (int r = 0; r < T; ++r)
    for (int c = 0; c < d; ++c) t.U_star(r, c) = ustar[c];
  t.W_star = outer(mup, mup);
  Matrix mm = outer(mum, mum);
  for (size_t i = 0; i < t.W_star.a.size(); ++i) t.W_star.a[i] += mm.a[i];
  for (int l = 1; l <= M; ++l) {
    Matrix nl = outer(spec.nu(l), musum);
    for (size_t i = 0; i < t.W_star.a.size(); ++i) t.W_star.a[i] += nl.a[i];
  }
  t.U_star_F = norm2(t.U_star.a);
  t.W_star_F = norm2(t.W_star.a);
  t.U_bar = scale(t.U_star, 1.0 / t.U_star_F);
  t.W_bar = scale(t.W_star, 1.0 / t.W_star_F);
  t.U_opt = scale(t.U_star, 1.0 / (spec.S * std::sqrt(2.0 * T)));
  t.W_opt = scale(t.W_star, 1.0 / (spec.S * spec.S * std::sqrt(2.0 * (M + 1))));
  return t;
}

ModelParams theta_star_direction(const TargetParams& t, const std::vector<int>& signs) {
  if (signs.empty()) throw DimError("theta_star_direction: signs must be nonempty");
  int H = static_cast<int>(signs.size());
  double s = 1.0 / std::sqrt(static_cast<double>(H));
  ModelParams th;
  th.heads.reserve(H);
  for (int h = 0; h < H; ++h) {
    if (signs[h] != 1 && signs[h] != -1)
      throw DimError("theta_star_direction: signs must be +1 or -1");
    th.heads.push_back({scale(t.U_bar, s), scale(t.W_bar, signs[h] * s)});
  }
  return th;
}

Vec relevance_scores(const TokenMatrix& x, const Matrix& W, int t) {
  if (W.rows != x.d() || W.cols != x.d()) throw DimError("relevance_scores: W must be d x d");
  if (t < 0 || t >= x.T()) throw DimError("relevance_scores: t out of range");
  Vec wt = matvec_t(W, x.X.row(t));  // W^T x_t
  return matvec(x.X, wt);
}

double gamma_attn(double eps, double S, int T, double Z_mu) {
  if (!(eps > 0) || eps > 1) throw ConfigError("gamma_attn: eps in (0,1] required");
  return (std::sqrt(static_cast<double>(T)) / (std::sqrt(2.0) * S)) *
         (S * S * (1.0 - eps) - 2.0 * eps * Z_mu);
}

double saturation_gamma(double eps, double S, int M, double zeta) {
  if (!(eps > 0)) throw ConfigError("saturation_gamma: eps > 0 required");
  if (!(zeta > 0) || !(zeta < 1))
    throw ConfigError("saturation_gamma: zeta in (0,1) required for log(1/zeta - 1)");
  return (8.0 * std::sqrt(2.0 * (M + 1)) / (3.0 * S * S)) * std::log((1.0 / zeta - 1.0) / eps);
}

double verify_saturation(const Dataset& data, const std::vector<RelevantMask>& masks,
                         double Gamma, const Matrix& W_opt) {
  if (static_cast<int>(masks.size()) != data.n())
    throw DimError("verify_saturation: one mask per example required");
  Matrix W = scale(W_opt, Gamma);
  double worst = 0;
  for (int i = 0; i < data.n(); ++i) {
    const auto& e = data.examples[i];
    std::vector<bool> is_rel(data.T, false);
    for (int t : masks[i].rel) is_rel[t] = true;
    Matrix A = attention_matrix(e.x, W);
    for (int t = 0; t < data.T; ++t) {
      double mass = 0;
      for (int tp = 0; tp < data.T; ++tp)
        if (!is_rel[tp]) mass += A(t, tp);
      worst = std::max(worst, mass);
    }
  }
  return worst;
}

NtkMarginResult ntk_margin(const Dataset& data, const ModelParams& th0,
                           const ModelParams& th_star) {
  th0.check_consistent();
  th_star.check_consistent();
  if (th_star.H() != th0.H() || th_star.T() != th0.T() || th_star.d() != th0.d())
    throw DimError("ntk_margin: direction shape mismatch");
  double nrm = norm2(flatten(th_star));
  if (std::abs(nrm - std::sqrt(2.0)) > 1e-10)
    throw DimError("ntk_margin: ||theta_star|| must equal sqrt(2)");
  NtkMarginResult r;
  r.per_sample.reserve(data.n());
  for (int i = 0; i < data.n(); ++i) {
    const auto& e = data.examples[i];
    std::vector<HeadGradient> gs = grad_multi(e.x, th0);
    double v = 0;
    for (int h = 0; h < th0.H(); ++h)
      v += fro_inner(gs[h].dU, th_star.heads[h].U) + fro_inner(gs[h].dW, th_star.heads[h].W);
    v *= e.y;
    r.per_sample.push_back(v);
    if (i == 0 || v < r.min_margin) r.min_margin = v;
  }
  return r;
}

double gamma_star(double S, int T, double zeta, int M, double Z_mu, double Z_nu, double Z,
                  double P) {
  if (!(S > 0)) throw ConfigError("gamma_star: S > 0 required");
  double Zb = std::max(Z_mu, Z_nu);
  double S2 = S * S;
  double term1 = T * (1.0 - zeta) * zeta *
                 (zeta * S2 * S2 - 7.0 * Zb * S2 - 12.0 * Zb * Zb - 16.0 * Zb * Zb * Zb / S2) /
                 (4.0 * std::sqrt(2.0 * (M + 1)));
  double term2 = -P * std::pow(static_cast<double>(T), 2.5) * std::pow(S + Z, 3.0);
  double term3 = (S * std::sqrt(static_cast<double>(T)) / std::sqrt(2.0)) *
                 (zeta - 2.0 * (1.0 - zeta) * Z_mu / S2);
  return term1 + term2 + term3;
}

GoodInitReport good_init_check(const Dataset& data, const ModelParams& th0, double delta,
                               const MixtureSpec& spec, const NoiseBounds& bounds, double P) {
  th0.check_consistent();
  if (!(delta > 0) || !(delta < 1)) throw ConfigError("good_init_check: delta in (0,1) required");
  GoodInitReport rep;
  rep.P_used = P;
  ParamNorms pn = param_norms(th0);
  rep.B2_emp = pn.max_per_head;
  for (const auto& e : data.examples)
    rep.B_phi_emp = std::max(rep.B_phi_emp, std::abs(forward_multi(e.x, th0)));
  TargetParams targets = make_targets(spec);
  rep.signs.resize(th0.H());
  for (int h = 0; h < th0.H(); ++h)
    rep.signs[h] = fro_inner(th0.heads[h].U, targets.U_star) >= 0 ? 1 : -1;
  NtkMarginResult mr = ntk_margin(data, th0, theta_star_direction(targets, rep.signs));
  rep.ntk_margin_min = mr.min_margin;
  rep.gamma_star_formula =
      gamma_star(spec.S, spec.T, spec.zeta, spec.M, bounds.Z_mu, bounds.Z_nu, bounds.Z, P);
  rep.B2_theory = std::sqrt(static_cast<double>(spec.T)) * (spec.S + P);
  rep.B_phi_theory =
      spec.T * bounds.R * (spec.S + P) * std::sqrt(2.0 * std::log(data.n() / delta));
  rep.p1_pass = rep.B2_emp <= rep.B2_theory + 1e-12;
  rep.p2_pass = rep.B_phi_emp <= rep.B_phi_theory + 1e-12;
  rep.p3_pass = rep.ntk_margin_min >= rep.gamma_star_formula / 2.0;
  return rep;
}

double RealizabilityWitness::g0(double eps) const {
  if (!(eps > 0)) throw ConfigError("g0: eps > 0 required");
  return (2.0 * B_phi + std::log(1.0 / eps)) / gamma;
}

double RealizabilityWitness::g(double eps) const { return B2 + g0(eps); }

RealizabilityWitness realizability_witness(double B2, double B_phi, double gamma) {
  if (!(gamma > 0)) throw ConfigError("realizability_witness: gamma > 0 required");
  return RealizabilityWitness{B2, B_phi, gamma};
}

namespace {
double ceil_sq(double t) {
  if (!std::isfinite(t)) return std::numeric_limits<double>::infinity();
  return std::ceil(std::max(1.0, t * t));
}
}  // namespace

HeadRequirements head_requirements(const HeadRequirementInputs& in) {
  HeadRequirements out;
  double inf = std::numeric_limits<double>::infinity();
  double gs = in.gamma_star > 0 ? in.gamma_star : 2.0 * in.gamma;
  if (!(in.gamma > 0) || !(gs > 0)) {
    out.H_train = out.H_gen = out.H_realiz = out.H_P3 = inf;
    out.finite = false;
    return out;
  }
  if (in.K < 1 || in.n < 1 || !(in.delta > 0) || !(in.delta < 1) || in.d < 1 || in.T < 1 ||
      !(in.R > 0))
    throw ConfigError("head_requirements: invalid inputs");
  double d = in.d, T = in.T, R = in.R;
  double sTd = std::sqrt(T * d), sd = std::sqrt(d), sT = std::sqrt(T);
  double R3 = R * R * R;
  double g0 = (2.0 * in.B_phi + std::log(in.K)) / in.gamma;
  double B2cap = std::max(in.B2, 1.0);
  double t_train = 36.0 * d * sTd * R3 * (3.0 * sd * R * R * (4.0 * g0 + in.B2) + 1.0) * g0 * g0;
  double t_gen = 256.0 * d * sTd * R3 * B2cap *
                 (3.0 * sd * R * R * (4.0 * g0 + in.B2) + 1.0) * g0 * g0;
  double t_realiz = in.B_phi > 0
                        ? (5.0 * d * sTd * R3 * B2cap / in.B_phi) * (3.0 * sd * R * R + 1.0) *
                              g0 * g0 * std::max(1.0, g0)
                        : inf;
  double t_p3 = 4.0 * (2.0 * R3 * T * in.S_plus_P + sT * R) *
                std::sqrt(2.0 * std::log(in.n / in.delta)) / gs;
  out.H_train = ceil_sq(t_train);
  out.H_gen = ceil_sq(t_gen);
  out.H_realiz = ceil_sq(t_realiz);
  out.H_P3 = ceil_sq(t_p3);
  out.finite = std::isfinite(out.H_train) && std::isfinite(out.H_gen) &&
               std::isfinite(out.H_realiz) && std::isfinite(out.H_P3);
  return out;
}

namespace {
double theta_form(double c, double D, double m, int d, int T, double R) {
  double dd = d;
  double t = c * dd * std::sqrt(static_cast<double>(T) * dd) * R * R * R *
             (3.0 * std::sqrt(dd) * R * R * (3.0 * D + m) + 1.0) * D * D;
  return std::ceil(std::max(1.0, t * t));
}
}  // namespace

double h_train_theta_form(double D, double m, int d, int T, double R) {
  return theta_form(36.0, D, m, d, T, R);
}

double h_gen_theta_form(double D, double m, int d, int T, double R) {
  return theta_form(256.0, D, m, d, T, R);
}

}  // namespace mha
