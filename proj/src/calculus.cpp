#include "mha/calculus.hpp"

#include <cmath>

namespace mha {

namespace {

// shared per-token pieces: p_t = softmax row, s_t = X u_t
struct HeadCtx {
  Matrix A;      // T x T attention matrix, row t = p_t
  Matrix S;      // T x T, column t = X u_t
  const Matrix& X;
  explicit HeadCtx(const TokenMatrix& x, const HeadParams& th)
      : A(attention_matrix(x, th.W)), S(matmul_nt(x.X, th.U)), X(x.X) {}
};

// R_t v = p .* v - p (p' v)
Vec jac_apply(const Vec& p, const Vec& v) {
  double pv = dot(p, v);
  Vec r(p.size());
  for (size_t i = 0; i < p.size(); ++i) r[i] = p[i] * v[i] - p[i] * pv;
  return r;
}

}  // namespace

HeadGradient grad_single(const TokenMatrix& x, const HeadParams& th) {
  if (th.U.rows != x.T() || th.U.cols != x.d()) throw DimError("grad_single: U shape mismatch");
  HeadCtx c(x, th);
  HeadGradient g{matmul(c.A, x.X), Matrix(x.d(), x.d())};
  for (int t = 0; t < x.T(); ++t) {
    Vec p = c.A.row(t);
    Vec s = c.S.col(t);
    Vec w = matvec_t(x.X, jac_apply(p, s));
    Vec xt = x.X.row(t);
    for (int i = 0; i < x.d(); ++i)
      for (int j = 0; j < x.d(); ++j) g.dW(i, j) += xt[i] * w[j];
  }
  return g;
}

std::vector<HeadGradient> grad_multi(const TokenMatrix& x, const ModelParams& th) {
  th.check_consistent();
  double inv = 1.0 / std::sqrt(static_cast<double>(th.H()));
  std::vector<HeadGradient> out;
  out.reserve(th.heads.size());
  for (const auto& h : th.heads) {
    HeadGradient g = grad_single(x, h);
    out.push_back(HeadGradient{scale(g.dU, inv), scale(g.dW, inv)});
  }
  return out;
}

Matrix hess_bilinear_UW(const TokenMatrix& x, const HeadParams& th, const Vec& a, const Vec& b) {
  if (static_cast<int>(a.size()) != x.T()) throw DimError("hess_bilinear_UW: a must have length T");
  if (static_cast<int>(b.size()) != x.d()) throw DimError("hess_bilinear_UW: b must have length d");
  Matrix A = attention_matrix(x, th.W);
  Vec Xb = matvec(x.X, b);
  Matrix out(x.d(), x.d());
  for (int t = 0; t < x.T(); ++t) {
    if (a[t] == 0.0) continue;
    Vec q = matvec_t(x.X, jac_apply(A.row(t), Xb));
    Vec xt = x.X.row(t);
    for (int i = 0; i < x.d(); ++i)
      for (int j = 0; j < x.d(); ++j) out(i, j) += a[t] * xt[i] * q[j];
  }
  return out;
}

Matrix hess_bilinear_WW(const TokenMatrix& x, const HeadParams& th, const Vec& c, const Vec& b) {
  if (static_cast<int>(c.size()) != x.d() || static_cast<int>(b.size()) != x.d())
    throw DimError("hess_bilinear_WW: c and b must have length d");
  HeadCtx ctx(x, th);
  Vec v = matvec(x.X, b);  // X b
  Matrix out(x.d(), x.d());
  for (int t = 0; t < x.T(); ++t) {
    Vec xt = x.X.row(t);
    double cxt = dot(c, xt);
    if (cxt == 0.0) continue;
    Vec p = ctx.A.row(t);
    Vec s = ctx.S.col(t);
    double vp = dot(v, p), sp = dot(s, p);
    // d_t = diag(Xb) X u_t - (X u_t)((Xb)' p) - (Xb)((X u_t)' p)
    Vec dt(x.T());
    for (int i = 0; i < x.T(); ++i) dt[i] = v[i] * s[i] - s[i] * vp - v[i] * sp;
    Vec w = matvec_t(x.X, jac_apply(p, dt));
    for (int i = 0; i < x.d(); ++i)
      for (int j = 0; j < x.d(); ++j) out(i, j) += cxt * xt[i] * w[j];
  }
  return out;
}

HeadHessian hess_assemble(const TokenMatrix& x, const HeadParams& th) {
  int T = x.T(), d = x.d();
  int np = T * d + d * d;
  if (np > 2000) throw DimError("hess_assemble: Td + d^2 > 2000");
  HeadCtx ctx(x, th);
  HeadHessian h;
  h.T = T;
  h.d = d;
  h.full = Matrix(np, np);
  int off = T * d;
  for (int t = 0; t < T; ++t) {
    Vec p = ctx.A.row(t);
    Vec s = ctx.S.col(t);
    Vec xt = x.X.row(t);
    // C_t = X^T R_t X (symmetric d x d)
    Matrix C(d, d);
    Vec m0 = matvec_t(x.X, p);
    {
      // X^T diag(p) X - m0 m0^T
      for (int i = 0; i < T; ++i) {
        Vec xi = x.X.row(i);
        for (int a2 = 0; a2 < d; ++a2)
          for (int b2 = 0; b2 < d; ++b2) C(a2, b2) += p[i] * xi[a2] * xi[b2];
      }
      for (int a2 = 0; a2 < d; ++a2)
        for (int b2 = 0; b2 < d; ++b2) C(a2, b2) -= m0[a2] * m0[b2];
    }
    // UW block: H[U(t,c), W(k,l)] = x_t[k] * C_t[c,l]
    for (int cidx = 0; cidx < d; ++cidx)
      for (int k = 0; k < d; ++k)
        for (int l = 0; l < d; ++l) {
          double val = xt[k] * C(cidx, l);
          h.full(t * d + cidx, off + k * d + l) += val;
          h.full(off + k * d + l, t * d + cidx) += val;
        }
    // WW block: G_t = X^T diag(s.*p) X - m1 m0^T - m0 m1^T + 2 sigma m0 m0^T
    //                 - sigma X^T diag(p) X
    double sigma = dot(s, p);
    Vec sp(T);
    for (int i = 0; i < T; ++i) sp[i] = s[i] * p[i];
    Vec m1 = matvec_t(x.X, sp);
    Matrix G(d, d);
    for (int i = 0; i < T; ++i) {
      Vec xi = x.X.row(i);
      double w0 = sp[i] - sigma * p[i];
      for (int a2 = 0; a2 < d; ++a2)
        for (int b2 = 0; b2 < d; ++b2) G(a2, b2) += w0 * xi[a2] * xi[b2];
    }
    for (int a2 = 0; a2 < d; ++a2)
      for (int b2 = 0; b2 < d; ++b2)
        G(a2, b2) += -m1[a2] * m0[b2] - m0[a2] * m1[b2] + 2.0 * sigma * m0[a2] * m0[b2];
    for (int k = 0; k < d; ++k)
      for (int l = 0; l < d; ++l)
        for (int k2 = 0; k2 < d; ++k2)
          for (int l2 = 0; l2 < d; ++l2)
            h.full(off + k * d + l, off + k2 * d + l2) += xt[k] * xt[k2] * G(l, l2);
  }
  return h;
}

HeadGradient hess_vec(const TokenMatrix& x, const HeadParams& th, const HeadParams& v) {
  int T = x.T(), d = x.d();
  if (v.U.rows != T || v.U.cols != d || v.W.rows != d || v.W.cols != d)
    throw DimError("hess_vec: direction shape mismatch");
  HeadCtx ctx(x, th);
  HeadGradient out{Matrix(T, d), Matrix(d, d)};
  for (int t = 0; t < T; ++t) {
    Vec p = ctx.A.row(t);
    Vec s = ctx.S.col(t);
    Vec xt = x.X.row(t);
    // r_t = V_W^T x_t; b-dot direction X r_t
    Vec rt = matvec_t(v.W, xt);
    Vec Xr = matvec(x.X, rt);
    // U rows: X^T R_t (X r_t)
    Vec du = matvec_t(x.X, jac_apply(p, Xr));
    for (int c = 0; c < d; ++c) out.dU(t, c) += du[c];
    // W from U-direction: outer(x_t, X^T R_t (X v_t)) with v_t = V_U row t
    Vec vt = v.U.row(t);
    Vec Xv = matvec(x.X, vt);
    Vec w1 = matvec_t(x.X, jac_apply(p, Xv));
    // W from W-direction: outer(x_t, G_t r_t)
    double sigma = dot(s, p);
    double m0r, m1r;
    Vec spXr(T);
    {
      Vec pXr(T);
      for (int i = 0; i < T; ++i) {
        spXr[i] = s[i] * p[i] * Xr[i];
        pXr[i] = p[i] * Xr[i];
      }
      Vec m0 = matvec_t(x.X, p);
      Vec sp(T);
      for (int i = 0; i < T; ++i) sp[i] = s[i] * p[i];
      Vec m1 = matvec_t(x.X, sp);
      m0r = dot(m0, rt);
      m1r = dot(m1, rt);
      Vec g = matvec_t(x.X, spXr);                   // X^T diag(s.*p) X r
      Vec g2 = matvec_t(x.X, pXr);                   // X^T diag(p) X r
      for (int j = 0; j < d; ++j)
        w1[j] += g[j] - m1[j] * m0r - m0[j] * m1r + 2.0 * sigma * m0[j] * m0r - sigma * g2[j];
    }
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) out.dW(i, j) += xt[i] * w1[j];
  }
  return out;
}

namespace {

double sum_xu_inf(const TokenMatrix& x, const HeadParams& th) {
  Matrix XU = matmul_nt(x.X, th.U);  // column t = X u_t
  double sum = 0;
  for (int t = 0; t < x.T(); ++t) sum += norm_inf(XU.col(t));
  return sum;
}

double one_inf_of(const Matrix& A) {
  double m = 0;
  for (double v : A.a) m = std::max(m, std::fabs(v));
  return m;
}

}  // namespace

double model_grad_bound(const TokenMatrix& x, const HeadParams& th) {
  double two_inf = x.R;  // max row norm, recomputed at construction
  return 2.0 * two_inf * two_inf * sum_xu_inf(x, th) +
         std::sqrt(static_cast<double>(x.T())) * two_inf;
}

double model_hess_bound(const TokenMatrix& x, const HeadParams& th) {
  double two_inf = x.R;
  double one_inf = one_inf_of(x.X);
  double d = x.d(), T = x.T();
  return 6.0 * d * d * two_inf * one_inf * one_inf * one_inf * sum_xu_inf(x, th) +
         2.0 * d * std::sqrt(T * d) * two_inf * one_inf * one_inf;
}

}  // namespace mha
