#include "mha/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

namespace mha {

namespace {
const double kNaN = std::numeric_limits<double>::quiet_NaN();
}

void GroupedParams::check() const {
  if (psi.empty() || psi.size() != count.size())
    throw DimError("GroupedParams: psi/count mismatch or empty");
  int T0 = psi[0].U.rows, d0 = psi[0].U.cols;
  double sum = 0;
  for (size_t g = 0; g < psi.size(); ++g) {
    if (psi[g].U.rows != T0 || psi[g].U.cols != d0 || psi[g].W.rows != d0 ||
        psi[g].W.cols != d0)
      throw DimError("GroupedParams: inconsistent head shapes");
    if (!(count[g] > 0)) throw DimError("GroupedParams: counts must be positive");
    sum += count[g];
  }
  if (std::abs(sum - H) > 1e-6 * std::max(1.0, H))
    throw DimError("GroupedParams: H must equal the sum of counts");
}

GroupedParams grouped_from_model(const ModelParams& th) {
  th.check_consistent();
  GroupedParams g;
  g.psi = th.heads;
  g.count.assign(th.heads.size(), 1.0);
  g.H = static_cast<double>(th.H());
  return g;
}

ModelParams model_from_grouped(const GroupedParams& g) {
  g.check();
  if (g.H > 100000.0) throw DimError("model_from_grouped: H too large to materialize");
  ModelParams th;
  for (int gi = 0; gi < g.G(); ++gi) {
    double c = g.count[gi];
    if (std::abs(c - std::floor(c + 0.5)) > 1e-9)
      throw DimError("model_from_grouped: counts must be integral");
    int reps = static_cast<int>(std::floor(c + 0.5));
    for (int r = 0; r < reps; ++r) th.heads.push_back(g.psi[gi]);
  }
  return th;
}

GroupedParams grouped_zeros(int T, int d, double H) {
  if (!(H >= 1)) throw DimError("grouped_zeros: H >= 1 required");
  GroupedParams g;
  g.psi.push_back(HeadParams{Matrix(T, d), Matrix(d, d)});
  g.count.push_back(H);
  g.H = H;
  return g;
}

double grouped_forward(const TokenMatrix& x, const GroupedParams& g) {
  double s = 0;
  for (int gi = 0; gi < g.G(); ++gi) s += g.count[gi] * forward_single(x, g.psi[gi]);
  return s / std::sqrt(g.H);
}

double grouped_risk(const Dataset& data, const GroupedParams& g, int threads, int skip) {
  g.check();
  if (g.T() != data.T || g.d() != data.d) throw DimError("grouped_risk: shape mismatch");
  if (skip >= data.n()) throw DimError("grouped_risk: skip out of range");
  double s = parallel_sum(
      data.n(),
      [&](int i) {
        if (i == skip) return 0.0;
        const auto& e = data.examples[i];
        return logistic(e.y * grouped_forward(e.x, g)).loss;
      },
      threads);
  return s / data.n();
}

std::vector<HeadGradient> grouped_risk_grad(const Dataset& data, const GroupedParams& g,
                                            int threads, int skip) {
  g.check();
  if (g.T() != data.T || g.d() != data.d) throw DimError("grouped_risk_grad: shape mismatch");
  if (skip >= data.n()) throw DimError("grouped_risk_grad: skip out of range");
  int T = data.T, d = data.d, G = g.G();
  int per = T * d + d * d;
  double inv = 1.0 / std::sqrt(g.H);
  Vec flat;
  parallel_accumulate(
      data.n(), G * per,
      [&](int i, Vec& acc) {
        if (i == skip) return;
        const auto& e = data.examples[i];
        double phi = grouped_forward(e.x, g);
        double c = logistic(e.y * phi).d1 * e.y;
        for (int gi = 0; gi < G; ++gi) {
          HeadGradient hg = grad_single(e.x, g.psi[gi]);
          size_t off = static_cast<size_t>(gi) * per;
          for (double v : hg.dU.a) acc[off++] += c * (inv * v);
          for (double v : hg.dW.a) acc[off++] += c * (inv * v);
        }
      },
      flat, threads);
  for (double& v : flat) v /= data.n();
  std::vector<HeadGradient> out;
  out.reserve(G);
  for (int gi = 0; gi < G; ++gi) {
    HeadGradient hg{Matrix(T, d), Matrix(d, d)};
    size_t off = static_cast<size_t>(gi) * per;
    for (double& v : hg.dU.a) v = flat[off++];
    for (double& v : hg.dW.a) v = flat[off++];
    out.push_back(std::move(hg));
  }
  return out;
}

double grouped_norm(const GroupedParams& g) {
  double s = 0;
  for (int gi = 0; gi < g.G(); ++gi) s += g.count[gi] * head_sq_norm(g.psi[gi]);
  return std::sqrt(s);
}

double grouped_dist(const GroupedParams& a, const GroupedParams& b) {
  if (a.G() != b.G() || a.T() != b.T() || a.d() != b.d())
    throw DimError("grouped_dist: group structures differ");
  double s = 0;
  for (int gi = 0; gi < a.G(); ++gi) {
    if (std::abs(a.count[gi] - b.count[gi]) > 1e-9)
      throw DimError("grouped_dist: group counts differ");
    double h = 0;
    for (size_t j = 0; j < a.psi[gi].U.a.size(); ++j) {
      double dv = a.psi[gi].U.a[j] - b.psi[gi].U.a[j];
      h += dv * dv;
    }
    for (size_t j = 0; j < a.psi[gi].W.a.size(); ++j) {
      double dv = a.psi[gi].W.a[j] - b.psi[gi].W.a[j];
      h += dv * dv;
    }
    s += a.count[gi] * h;
  }
  return std::sqrt(s);
}

double grouped_maxnorm(const GroupedParams& g) {
  double m = 0;
  for (const auto& p : g.psi) m = std::max(m, std::sqrt(head_sq_norm(p)));
  return m;
}

double grouped_max_U_F(const GroupedParams& g) {
  double m = 0;
  for (const auto& p : g.psi) {
    double s = 0;
    for (double v : p.U.a) s += v * v;
    m = std::max(m, std::sqrt(s));
  }
  return m;
}

double grad_norm_of(const GroupedParams& g, const std::vector<HeadGradient>& grads) {
  if (static_cast<int>(grads.size()) != g.G()) throw DimError("grad_norm_of: size mismatch");
  double s = 0;
  for (int gi = 0; gi < g.G(); ++gi) {
    double h = 0;
    for (double v : grads[gi].dU.a) h += v * v;
    for (double v : grads[gi].dW.a) h += v * v;
    s += g.count[gi] * h;
  }
  return std::sqrt(s);
}

LossBounds grouped_loss_bounds(double R, const GroupedParams& g) {
  return loss_bounds_raw(R, g.T(), g.d(), g.H, grouped_maxnorm(g), grouped_max_U_F(g));
}

void TrainConfig::validate() const {
  if (K < 0) throw ConfigError("TrainConfig: K >= 0 required");
  if (eta_rule != EtaRule::kAutoTheorem && !(eta > 0))
    throw ConfigError("TrainConfig: eta > 0 required");
  if (record_every < 1) throw ConfigError("TrainConfig: record_every >= 1 required");
  if (momentum < 0 || momentum >= 1) throw ConfigError("TrainConfig: momentum in [0,1) required");
  if (!(adam_b1 >= 0 && adam_b1 < 1 && adam_b2 >= 0 && adam_b2 < 1 && adam_eps > 0))
    throw ConfigError("TrainConfig: invalid adam hyperparameters");
  if (threads < 1) throw ConfigError("TrainConfig: threads >= 1 required");
  if (!(divergence_guard > 0)) throw ConfigError("TrainConfig: divergence_guard > 0 required");
}

std::string trace_csv_header() {
  return "iter,train_loss,test_loss,min_margin,grad_norm,dist_to_init,avg_W_norm,avg_U_norm,"
         "attn_rel_mass,align_W,align_U";
}

std::string trace_csv_row(const TraceRow& r) {
  char buf[512];
  std::snprintf(buf, sizeof(buf),
                "%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g", r.k,
                r.train_loss, r.test_loss, r.min_margin, r.grad_norm, r.dist_to_init,
                r.avg_W_norm, r.avg_U_norm, r.attn_rel_mass, r.align_W, r.align_U);
  return buf;
}

namespace {

double alignment(const GroupedParams& g, const Matrix* target, bool use_U) {
  if (!target) return kNaN;
  double num = 0, sq = 0;
  for (int gi = 0; gi < g.G(); ++gi) {
    const Matrix& M = use_U ? g.psi[gi].U : g.psi[gi].W;
    if (!M.same_shape(*target)) throw DimError("alignment: planted shape mismatch");
    num += g.count[gi] * fro_inner(M, *target);
    double s = 0;
    for (double v : M.a) s += v * v;
    sq += g.count[gi] * s;
  }
  double tn = 0;
  for (double v : target->a) tn += v * v;
  double den = std::sqrt(sq) * std::sqrt(g.H) * std::sqrt(tn);
  if (den == 0) return kNaN;
  return num / den;
}

}  // namespace

TraceRow trace_metrics(int k, const Dataset& data, const GroupedParams& g,
                       const GroupedParams& g0, const MetricContext& ctx, double train_loss,
                       double grad_norm, int threads) {
  TraceRow r;
  r.k = k;
  r.train_loss = train_loss;
  r.grad_norm = grad_norm;
  r.test_loss = ctx.test ? grouped_risk(*ctx.test, g, threads) : kNaN;
  double mm = 0;
  for (int i = 0; i < data.n(); ++i) {
    double v = data.examples[i].y * grouped_forward(data.examples[i].x, g);
    if (i == 0 || v < mm) mm = v;
  }
  r.min_margin = mm;
  r.dist_to_init = grouped_dist(g, g0);
  double wsum = 0, usum = 0;
  for (int gi = 0; gi < g.G(); ++gi) {
    double w2 = 0, u2 = 0;
    for (double v : g.psi[gi].W.a) w2 += v * v;
    for (double v : g.psi[gi].U.a) u2 += v * v;
    wsum += g.count[gi] * std::sqrt(w2);
    usum += g.count[gi] * std::sqrt(u2);
  }
  r.avg_W_norm = wsum / g.H;
  r.avg_U_norm = usum / std::sqrt(g.H);
  if (ctx.masks) {
    if (static_cast<int>(ctx.masks->size()) != data.n())
      throw DimError("trace_metrics: one mask per train sample required");
    double acc = 0;
    for (int i = 0; i < data.n(); ++i) {
      const auto& e = data.examples[i];
      std::vector<bool> is_rel(data.T, false);
      for (int t : (*ctx.masks)[i].rel) is_rel[t] = true;
      double per_head = 0;
      for (int gi = 0; gi < g.G(); ++gi) {
        Matrix A = attention_matrix(e.x, g.psi[gi].W);
        double mass = 0;
        for (int t = 0; t < data.T; ++t)
          for (int tp = 0; tp < data.T; ++tp)
            if (is_rel[tp]) mass += A(t, tp);
        per_head += g.count[gi] * (mass / data.T);
      }
      acc += per_head / g.H;
    }
    r.attn_rel_mass = acc / data.n();
  } else {
    r.attn_rel_mass = kNaN;
  }
  r.align_W = alignment(g, ctx.W_planted, false);
  r.align_U = alignment(g, ctx.U_planted, true);
  return r;
}

double theorem_eta(const Dataset& data, const GroupedParams& target, const GroupedParams& init,
                   int K, int threads) {
  if (K < 1) throw ConfigError("theorem_eta: K >= 1 required");
  double D = grouped_dist(target, init);
  double rho_t = rho_of(data.R, target.T(), target.d(), target.H, D, grouped_maxnorm(target));
  double Lt = grouped_risk(data, target, threads);
  double L0 = grouped_risk(data, init, threads);
  double eta = 1.0;
  if (rho_t > 0) eta = std::min(eta, 1.0 / rho_t);
  if (Lt > 0) eta = std::min(eta, D * D / (K * Lt));
  if (L0 > 0) eta = std::min(eta, D * D / L0);
  return eta;
}

double sqrtH_eta(double base, double H) {
  if (!(base > 0) || !(H >= 1)) throw ConfigError("sqrtH_eta: base > 0 and H >= 1 required");
  return base * std::sqrt(H);
}

ModelParams gd_step(const Dataset& data, const ModelParams& th, double eta, int threads) {
  if (!(eta > 0)) throw ConfigError("gd_step: eta > 0 required");
  ModelParams g = risk_gradient(data, th, threads);
  for (const auto& h : g.heads)
    if (!h.U.finite() || !h.W.finite()) throw NumericError("gd_step: non-finite gradient");
  ModelParams out = th;
  for (int h = 0; h < th.H(); ++h) {
    axpy(out.heads[h].U, -eta, g.heads[h].U);
    axpy(out.heads[h].W, -eta, g.heads[h].W);
  }
  return out;
}

namespace {

struct OptState {
  std::vector<HeadGradient> m, v;  // momentum buffer reuses m

  void init(const GroupedParams& g) {
    int T = g.T(), d = g.d();
    m.assign(g.G(), HeadGradient{Matrix(T, d), Matrix(d, d)});
    v.assign(g.G(), HeadGradient{Matrix(T, d), Matrix(d, d)});
  }
};

void apply_update(GroupedParams& g, const std::vector<HeadGradient>& grads,
                  const TrainConfig& cfg, OptState& st, int k, double eta) {
  switch (cfg.optimizer) {
    case Optimizer::kGd:
      for (int gi = 0; gi < g.G(); ++gi) {
        axpy(g.psi[gi].U, -eta, grads[gi].dU);
        axpy(g.psi[gi].W, -eta, grads[gi].dW);
      }
      break;
    case Optimizer::kGdMomentum:
      for (int gi = 0; gi < g.G(); ++gi) {
        for (size_t j = 0; j < st.m[gi].dU.a.size(); ++j) {
          st.m[gi].dU.a[j] = cfg.momentum * st.m[gi].dU.a[j] + grads[gi].dU.a[j];
          g.psi[gi].U.a[j] -= eta * st.m[gi].dU.a[j];
        }
        for (size_t j = 0; j < st.m[gi].dW.a.size(); ++j) {
          st.m[gi].dW.a[j] = cfg.momentum * st.m[gi].dW.a[j] + grads[gi].dW.a[j];
          g.psi[gi].W.a[j] -= eta * st.m[gi].dW.a[j];
        }
      }
      break;
    case Optimizer::kAdam: {
      double t = static_cast<double>(k) + 1.0;
      double bc1 = 1.0 - std::pow(cfg.adam_b1, t);
      double bc2 = 1.0 - std::pow(cfg.adam_b2, t);
      auto upd = [&](Vec& p, Vec& m, Vec& v, const Vec& gr) {
        for (size_t j = 0; j < p.size(); ++j) {
          m[j] = cfg.adam_b1 * m[j] + (1.0 - cfg.adam_b1) * gr[j];
          v[j] = cfg.adam_b2 * v[j] + (1.0 - cfg.adam_b2) * gr[j] * gr[j];
          double mh = m[j] / bc1;
          double vh = v[j] / bc2;
          p[j] -= eta * mh / (std::sqrt(vh) + cfg.adam_eps);
        }
      };
      for (int gi = 0; gi < g.G(); ++gi) {
        upd(g.psi[gi].U.a, st.m[gi].dU.a, st.v[gi].dU.a, grads[gi].dU.a);
        upd(g.psi[gi].W.a, st.m[gi].dW.a, st.v[gi].dW.a, grads[gi].dW.a);
      }
      break;
    }
  }
}

}  // namespace

TrainTrace train_grouped(const Dataset& data, const GroupedParams& g0, const TrainConfig& cfg,
                         const MetricContext& ctx, GroupedParams* out_final,
                         const GroupedParams* eta_target) {
  cfg.validate();
  g0.check();
  TrainTrace trace;
  double eta;
  switch (cfg.eta_rule) {
    case EtaRule::kExplicit:
      eta = cfg.eta;
      break;
    case EtaRule::kAutoTheorem:
      if (!eta_target) throw ConfigError("train: auto_theorem rule requires a target");
      eta = theorem_eta(data, *eta_target, g0, std::max(cfg.K, 1), cfg.threads);
      break;
    case EtaRule::kSqrtHScaled:
      eta = sqrtH_eta(cfg.eta, g0.H);
      break;
    default:
      throw ConfigError("train: unknown eta rule");
  }
  if (!(eta > 0)) throw ConfigError("train: resolved step-size must be positive");
  trace.eta_used = eta;

  GroupedParams g = g0;
  OptState st;
  st.init(g);
  for (int k = 0;; ++k) {
    double L = grouped_risk(data, g, cfg.threads);
    std::vector<HeadGradient> grads = grouped_risk_grad(data, g, cfg.threads);
    double gn = grad_norm_of(g, grads);
    bool diverged = !std::isfinite(L) || L > cfg.divergence_guard;
    if (k % cfg.record_every == 0 || k == cfg.K || diverged)
      trace.rows.push_back(trace_metrics(k, data, g, g0, ctx, L, gn, cfg.threads));
    if (diverged) {
      trace.diverged = true;
      break;
    }
    if (k == cfg.K) break;
    apply_update(g, grads, cfg, st, k, eta);
  }
  if (out_final) *out_final = std::move(g);
  return trace;
}

TrainTrace train(const Dataset& data, const ModelParams& th0, const TrainConfig& cfg,
                 const MetricContext& ctx, ModelParams* out_final,
                 const ModelParams* eta_target) {
  GroupedParams g0 = grouped_from_model(th0);
  GroupedParams gt;
  if (eta_target) gt = grouped_from_model(*eta_target);
  GroupedParams gfinal;
  TrainTrace trace = train_grouped(data, g0, cfg, ctx, out_final ? &gfinal : nullptr,
                                   eta_target ? &gt : nullptr);
  if (out_final) *out_final = model_from_grouped(gfinal);
  return trace;
}

PhaseOneResult phase_one(const Dataset& data, int H, std::uint64_t seed, const MixtureSpec& spec,
                         const ModelParams* th0) {
  if (H < 1) throw DimError("phase_one: H >= 1 required");
  if (H > 100000) throw DimError("phase_one: H too large to materialize");
  if (data.T != spec.T || data.d != spec.d) throw DimError("phase_one: spec/data shape mismatch");
  if (th0) {
    th0->check_consistent();
    for (const auto& h : th0->heads)
      for (double v : flatten_head(h))
        if (v != 0.0) throw ConfigError("phase_one: theta0 must be exactly zero");
  }
  int T = data.T, d = data.d, n = data.n();
  Rng rng(seed);
  PhaseOneResult res;
  res.alpha.resize(H);
  for (int h = 0; h < H; ++h) res.alpha[h] = rng.sign();

  // common row of U^(1)/alpha: (1/(2nT)) sum_i y_i sum_t x_t
  Vec rbar(d, 0.0);
  for (int i = 0; i < n; ++i) {
    const auto& e = data.examples[i];
    for (int t = 0; t < T; ++t)
      for (int c = 0; c < d; ++c) rbar[c] += e.y * e.x.X(t, c);
  }
  for (int c = 0; c < d; ++c) rbar[c] /= 2.0 * n * T;

  HeadParams plus{Matrix(T, d), Matrix(d, d)};
  for (int t = 0; t < T; ++t)
    for (int c = 0; c < d; ++c) plus.U(t, c) = rbar[c];
  HeadParams minus{Matrix(T, d), Matrix(d, d)};
  for (int t = 0; t < T; ++t)
    for (int c = 0; c < d; ++c) minus.U(t, c) = -rbar[c];

  for (int h = 0; h < H; ++h) res.theta1.heads.push_back(res.alpha[h] == 1 ? plus : minus);
  int n_plus = 0;
  for (int a : res.alpha) n_plus += (a == 1);
  if (n_plus > 0) {
    res.theta1_grouped.psi.push_back(plus);
    res.theta1_grouped.count.push_back(static_cast<double>(n_plus));
  }
  if (n_plus < H) {
    res.theta1_grouped.psi.push_back(minus);
    res.theta1_grouped.count.push_back(static_cast<double>(H - n_plus));
  }
  res.theta1_grouped.H = static_cast<double>(H);

  // E[rbar] = (zeta/4)(mu+ - mu-): the 1/2 from l'(0) is already in rbar and
  // E[y mu_y] = (mu+ - mu-)/2, so the concentration center carries zeta/4.
  Vec mup = spec.mu_plus(), mum = spec.mu_minus();
  res.p = rbar;
  for (int c = 0; c < d; ++c) res.p[c] -= (spec.zeta / 4.0) * (mup[c] - mum[c]);
  res.P_empirical = norm2(res.p);
  return res;
}

DescentReport verify_descent(const Dataset& data, const GroupedParams& g0, double eta, int K,
                             int threads) {
  if (!(eta > 0) || K < 1) throw ConfigError("verify_descent: eta > 0 and K >= 1 required");
  DescentReport rep;
  rep.eta = eta;
  GroupedParams g = g0;
  double L = grouped_risk(data, g, threads);
  double beta2 = grouped_loss_bounds(data.R, g).tight.beta2;
  TrainConfig cfg;  // plain GD
  OptState st;
  st.init(g);
  for (int k = 0; k < K; ++k) {
    std::vector<HeadGradient> grads = grouped_risk_grad(data, g, threads);
    double gn = grad_norm_of(g, grads);
    apply_update(g, grads, cfg, st, k, eta);
    double L_next = grouped_risk(data, g, threads);
    double beta2_next = grouped_loss_bounds(data.R, g).tight.beta2;
    DescentStep step;
    step.k = k;
    step.loss = L;
    step.next_loss = L_next;
    step.grad_sq = gn * gn;
    step.rho_k = std::max(beta2, beta2_next);
    step.applicable = eta <= 1.0 / step.rho_k;
    step.raw_violated = L_next > L - 0.5 * eta * step.grad_sq + 1e-12 * std::max(1.0, L);
    step.violated = step.applicable && step.raw_violated;
    rep.applicable += step.applicable;
    rep.violations += step.violated;
    rep.raw_violations += step.raw_violated;
    rep.steps.push_back(step);
    L = L_next;
    beta2 = beta2_next;
  }
  return rep;
}

TheoremReport verify_theorem_bounds(const Dataset& data, const GroupedParams& target,
                                    const GroupedParams& g0, int K, double eta, int threads) {
  if (!(eta > 0) || K < 1)
    throw ConfigError("verify_theorem_bounds: eta > 0 and K >= 1 required");
  TheoremReport rep;
  rep.eta = eta;
  rep.D = grouped_dist(target, g0);
  rep.m = grouped_maxnorm(target);
  rep.H_required = h_train_theta_form(rep.D, rep.m, g0.d(), g0.T(), data.R);
  rep.h_ok = g0.H >= rep.H_required;
  rep.eta_max = theorem_eta(data, target, g0, K, threads);
  rep.eta_ok = eta <= rep.eta_max * (1.0 + 1e-12);
  rep.certified = rep.h_ok && rep.eta_ok;
  rep.target_loss = grouped_risk(data, target, threads);
  rep.init_loss = grouped_risk(data, g0, threads);

  GroupedParams g = g0;
  TrainConfig cfg;
  OptState st;
  st.init(g);
  double sum_loss = 0;
  double inf = std::numeric_limits<double>::infinity();
  rep.worst_avg_slack = inf;
  rep.worst_iter_slack = inf;
  for (int k = 1; k <= K; ++k) {
    std::vector<HeadGradient> grads = grouped_risk_grad(data, g, threads);
    apply_update(g, grads, cfg, st, k - 1, eta);
    double L = grouped_risk(data, g, threads);
    sum_loss += L;
    double avg = sum_loss / k;
    double rhs = 2.0 * rep.target_loss + 5.0 * rep.D * rep.D / (4.0 * eta * k);
    rep.worst_avg_slack = std::min(rep.worst_avg_slack, rhs - avg);
    rep.worst_iter_slack = std::min(rep.worst_iter_slack, 3.0 * rep.D - grouped_dist(g, target));
  }
  rep.final_dist_slack = 4.0 * rep.D - grouped_dist(g, g0);
  rep.avg_ok = rep.worst_avg_slack >= 0;
  rep.iter_ok = rep.worst_iter_slack >= 0;
  rep.final_dist_ok = rep.final_dist_slack >= 0;
  return rep;
}

}  // namespace mha
