#include "mha/objective.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <thread>

namespace mha {

Dataset Dataset::from(std::vector<LabeledExample> ex) {
  if (ex.empty()) throw DimError("Dataset: n >= 1 required");
  Dataset ds;
  ds.T = ex[0].x.T();
  ds.d = ex[0].x.d();
  for (const auto& e : ex) {
    if (e.x.T() != ds.T || e.x.d() != ds.d) throw DimError("Dataset: inconsistent shapes");
    if (e.y != 1 && e.y != -1) throw DimError("Dataset: labels must be +1 or -1");
    ds.R = std::max(ds.R, e.x.R);
  }
  ds.examples = std::move(ex);
  return ds;
}

Logistic logistic(double t) {
  Logistic r{};
  if (t > 0) {
    double e = std::exp(-t);
    r.loss = std::log1p(e);
    r.d1 = -e / (1.0 + e);
    r.d2 = e / ((1.0 + e) * (1.0 + e));
  } else {
    double e = std::exp(t);
    r.loss = -t + std::log1p(e);
    r.d1 = -1.0 / (1.0 + e);
    r.d2 = e / ((1.0 + e) * (1.0 + e));
  }
  return r;
}

namespace {
constexpr int kChunk = 32;

double tree_sum(const Vec& parts, size_t lo, size_t hi) {
  if (hi - lo == 1) return parts[lo];
  size_t mid = lo + (hi - lo) / 2;
  return tree_sum(parts, lo, mid) + tree_sum(parts, mid, hi);
}
}  // namespace

double parallel_sum(int n, const std::function<double(int)>& f, int threads) {
  if (n == 0) return 0;
  int nchunks = (n + kChunk - 1) / kChunk;
  Vec parts(nchunks, 0.0);
  auto work = [&](int c0, int c1) {
    for (int c = c0; c < c1; ++c) {
      double s = 0;
      for (int i = c * kChunk; i < std::min(n, (c + 1) * kChunk); ++i) s += f(i);
      parts[c] = s;
    }
  };
  threads = std::max(1, std::min(threads, nchunks));
  if (threads == 1) {
    work(0, nchunks);
  } else {
    std::vector<std::thread> pool;
    int per = (nchunks + threads - 1) / threads;
    for (int t = 0; t < threads; ++t) {
      int c0 = t * per, c1 = std::min(nchunks, (t + 1) * per);
      if (c0 < c1) pool.emplace_back(work, c0, c1);
    }
    for (auto& th : pool) th.join();
  }
  return tree_sum(parts, 0, parts.size());
}

void parallel_accumulate(int n, int dim, const std::function<void(int, Vec&)>& add_into,
                         Vec& out, int threads) {
  out.assign(dim, 0.0);
  if (n == 0) return;
  int nchunks = (n + kChunk - 1) / kChunk;
  std::vector<Vec> parts(nchunks);
  auto work = [&](int c0, int c1) {
    for (int c = c0; c < c1; ++c) {
      parts[c].assign(dim, 0.0);
      for (int i = c * kChunk; i < std::min(n, (c + 1) * kChunk); ++i) add_into(i, parts[c]);
    }
  };
  threads = std::max(1, std::min(threads, nchunks));
  if (threads == 1) {
    work(0, nchunks);
  } else {
    std::vector<std::thread> pool;
    int per = (nchunks + threads - 1) / threads;
    for (int t = 0; t < threads; ++t) {
      int c0 = t * per, c1 = std::min(nchunks, (t + 1) * per);
      if (c0 < c1) pool.emplace_back(work, c0, c1);
    }
    for (auto& th : pool) th.join();
  }
  // pairwise tree over chunk partials
  std::function<Vec(size_t, size_t)> combine = [&](size_t lo, size_t hi) -> Vec {
    if (hi - lo == 1) return std::move(parts[lo]);
    size_t mid = lo + (hi - lo) / 2;
    Vec a = combine(lo, mid);
    Vec b = combine(mid, hi);
    for (size_t i = 0; i < a.size(); ++i) a[i] += b[i];
    return a;
  };
  out = combine(0, parts.size());
}

double empirical_risk(const Dataset& data, const ModelParams& th, int threads) {
  th.check_consistent();
  if (th.T() != data.T || th.d() != data.d) throw DimError("empirical_risk: shape mismatch");
  double s = parallel_sum(
      data.n(),
      [&](int i) {
        const auto& e = data.examples[i];
        return logistic(e.y * forward_multi(e.x, th)).loss;
      },
      threads);
  return s / data.n();
}

ModelParams risk_gradient(const Dataset& data, const ModelParams& th, int threads) {
  th.check_consistent();
  if (th.T() != data.T || th.d() != data.d) throw DimError("risk_gradient: shape mismatch");
  int T = data.T, d = data.d, H = th.H();
  int dim = H * (T * d + d * d);
  Vec flat;
  parallel_accumulate(
      data.n(), dim,
      [&](int i, Vec& acc) {
        const auto& e = data.examples[i];
        double phi = forward_multi(e.x, th);
        double c = logistic(e.y * phi).d1 * e.y;
        std::vector<HeadGradient> gs = grad_multi(e.x, th);
        size_t off = 0;
        for (const auto& g : gs) {
          for (double v : g.dU.a) acc[off++] += c * v;
          for (double v : g.dW.a) acc[off++] += c * v;
        }
      },
      flat, threads);
  for (double& v : flat) v /= data.n();
  return unflatten(flat, T, d, H);
}

ModelParams risk_hvp(const Dataset& data, const ModelParams& th, const ModelParams& v) {
  th.check_consistent();
  v.check_consistent();
  if (v.H() != th.H() || v.T() != th.T() || v.d() != th.d())
    throw DimError("risk_hvp: direction shape mismatch");
  int H = th.H();
  double invH = 1.0 / std::sqrt(static_cast<double>(H));
  ModelParams out = zeros_model(th.T(), th.d(), H);
  for (int i = 0; i < data.n(); ++i) {
    const auto& e = data.examples[i];
    double phi = forward_multi(e.x, th);
    Logistic lg = logistic(e.y * phi);
    // <grad, v>
    std::vector<HeadGradient> gs = grad_multi(e.x, th);
    double gv = 0;
    for (int h = 0; h < H; ++h)
      gv += fro_inner(gs[h].dU, v.heads[h].U) + fro_inner(gs[h].dW, v.heads[h].W);
    for (int h = 0; h < H; ++h) {
      // l'' * g g^T v
      axpy(out.heads[h].U, lg.d2 * gv, gs[h].dU);
      axpy(out.heads[h].W, lg.d2 * gv, gs[h].dW);
      // l' y * (1/sqrt(H)) HeadHessian v_h  (model Hessian is block diagonal
      // with per-head blocks HeadHessian/sqrt(H))
      HeadGradient hv = hess_vec(e.x, th.heads[h], v.heads[h]);
      axpy(out.heads[h].U, lg.d1 * e.y * invH, hv.dU);
      axpy(out.heads[h].W, lg.d1 * e.y * invH, hv.dW);
    }
  }
  for (auto& h : out.heads) {
    for (double& x : h.U.a) x /= data.n();
    for (double& x : h.W.a) x /= data.n();
  }
  return out;
}

Matrix risk_hessian_dense(const Dataset& data, const ModelParams& th) {
  th.check_consistent();
  int T = th.T(), d = th.d(), H = th.H();
  int per = T * d + d * d;
  int np = H * per;
  if (np > 2000) throw DimError("risk_hessian_dense: H(Td+d^2) > 2000");
  double invH = 1.0 / std::sqrt(static_cast<double>(H));
  Matrix out(np, np);
  for (int i = 0; i < data.n(); ++i) {
    const auto& e = data.examples[i];
    double phi = forward_multi(e.x, th);
    Logistic lg = logistic(e.y * phi);
    std::vector<HeadGradient> gs = grad_multi(e.x, th);
    Vec g;
    g.reserve(np);
    for (const auto& hg : gs) {
      g.insert(g.end(), hg.dU.a.begin(), hg.dU.a.end());
      g.insert(g.end(), hg.dW.a.begin(), hg.dW.a.end());
    }
    for (int r = 0; r < np; ++r)
      for (int c = 0; c < np; ++c) out(r, c) += lg.d2 * g[r] * g[c];
    for (int h = 0; h < H; ++h) {
      HeadHessian hh = hess_assemble(e.x, th.heads[h]);
      int off = h * per;
      for (int r = 0; r < per; ++r)
        for (int c = 0; c < per; ++c) out(off + r, off + c) += lg.d1 * e.y * invH * hh.full(r, c);
    }
  }
  for (double& x : out.a) x /= data.n();
  return out;
}

BetaSet beta_set(double R, int T, int d, double H, double m) {
  BetaSet b;
  double sT = std::sqrt(static_cast<double>(T));
  double sTd = std::sqrt(static_cast<double>(T) * d);
  double sd = std::sqrt(static_cast<double>(d));
  b.beta1 = sT * R * (2.0 * R * R * m + 1.0);
  b.beta3 = 2.0 * d * sTd * R * R * R * (3.0 * sd * R * R * m + 1.0);
  b.kappa = b.beta3 / std::sqrt(H);
  b.beta2 = b.kappa + b.beta1 * b.beta1 / 4.0;
  return b;
}

LossBounds loss_bounds_raw(double R, int T, int d, double H, double m_loose, double m_tight) {
  LossBounds lb;
  lb.R = R;
  lb.r_ge_1 = (R >= 1.0);
  lb.loose = beta_set(R, T, d, H, m_loose);
  lb.tight = beta_set(R, T, d, H, m_tight);
  return lb;
}

LossBounds loss_bounds(double R, const ModelParams& th) {
  th.check_consistent();
  ParamNorms pn = param_norms(th);
  return loss_bounds_raw(R, th.T(), th.d(), th.H(), pn.max_per_head, pn.max_U_frobenius);
}

double alpha_of(double R, int T, int d, double dist, double maxnorm) {
  double sT = std::sqrt(static_cast<double>(T));
  double sd = std::sqrt(static_cast<double>(d));
  return 3.0 * d * sd * R * R *
         (3.0 * sT * R * R * R * (3.0 * dist + maxnorm) + 2.0 * sT * R);
}

double rho_of(double R, int T, int d, double H, double dist, double maxnorm) {
  double a = alpha_of(R, T, d, dist, maxnorm);
  double sTd = std::sqrt(static_cast<double>(T) * d);
  return (2.0 * d * sTd * R * R * R / std::sqrt(H) + T * R * R / 4.0) * a * a;
}

double rho(const ModelParams& th_target, const ModelParams& th0, double R) {
  th_target.check_consistent();
  th0.check_consistent();
  if (th_target.H() != th0.H() || th_target.T() != th0.T() || th_target.d() != th0.d())
    throw DimError("rho: shape mismatch");
  Vec diff = flatten(th_target);
  Vec f0 = flatten(th0);
  for (size_t i = 0; i < diff.size(); ++i) diff[i] -= f0[i];
  double dist = norm2(diff);
  double m = param_norms(th_target).max_per_head;
  return rho_of(R, th_target.T(), th_target.d(), th_target.H(), dist, m);
}

GlqcResult glqc_check(const Dataset& data, const ModelParams& th1, const ModelParams& th2,
                      int grid) {
  if (grid < 3) throw DimError("glqc_check: grid >= 3 required");
  th1.check_consistent();
  th2.check_consistent();
  if (th1.H() != th2.H() || th1.T() != th2.T() || th1.d() != th2.d())
    throw DimError("glqc_check: shape mismatch");
  GlqcResult r;
  LossBounds b1 = loss_bounds(data.R, th1), b2 = loss_bounds(data.R, th2);
  Vec f1 = flatten(th1), f2 = flatten(th2);
  Vec diff = f1;
  for (size_t i = 0; i < diff.size(); ++i) diff[i] -= f2[i];
  double dist2 = dot(diff, diff);
  r.sqrt_H = std::sqrt(static_cast<double>(th1.H()));
  r.condition_lhs = 2.0 * std::max(b1.loose.beta3, b2.loose.beta3) * dist2;
  r.condition_holds = (r.condition_lhs <= r.sqrt_H);
  int T = th1.T(), d = th1.d(), H = th1.H();
  for (int g = 0; g < grid; ++g) {
    double al = static_cast<double>(g) / (grid - 1);
    Vec p(f1.size());
    for (size_t i = 0; i < p.size(); ++i) p[i] = (1.0 - al) * f2[i] + al * f1[i];
    double L = empirical_risk(data, unflatten(p, T, d, H));
    r.segment_max = std::max(r.segment_max, L);
    if (g == 0 || g == grid - 1) r.endpoint_max = std::max(r.endpoint_max, L);
  }
  r.ratio = r.endpoint_max > 0 ? r.segment_max / r.endpoint_max : 1.0;
  r.conclusion_holds = r.segment_max <= (4.0 / 3.0) * r.endpoint_max + 1e-12;
  return r;
}

LossReport loss_report(const Dataset& data, const ModelParams& th, const ModelParams& th0,
                       int threads) {
  LossReport r;
  r.value = empirical_risk(data, th, threads);
  ModelParams g = risk_gradient(data, th, threads);
  r.grad_norm = norm2(flatten(g));
  LossBounds lb = loss_bounds(data.R, th);
  r.beta1 = lb.tight.beta1;
  r.beta2 = lb.tight.beta2;
  r.beta3 = lb.tight.beta3;
  r.kappa = lb.tight.kappa;
  r.rho = rho(th, th0, data.R);
  return r;
}

std::string loss_report_csv_header() {
  return "value,grad_norm,beta1,beta2,beta3,kappa,rho";
}

std::string loss_report_csv_row(const LossReport& r) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g", r.value,
                r.grad_norm, r.beta1, r.beta2, r.beta3, r.kappa, r.rho);
  return buf;
}

}  // namespace mha
