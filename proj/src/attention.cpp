#include "mha/attention.hpp"

#include <cmath>

namespace mha {

TokenMatrix::TokenMatrix(Matrix X_) : X(std::move(X_)) {
  if (X.rows < 1 || X.cols < 1) throw DimError("TokenMatrix: T >= 1 and d >= 1 required");
  for (int t = 0; t < X.rows; ++t) {
    double s = 0;
    for (int j = 0; j < X.cols; ++j) s += X(t, j) * X(t, j);
    R = std::max(R, std::sqrt(s));
  }
}

void ModelParams::check_consistent() const {
  if (heads.empty()) throw DimError("ModelParams: H >= 1 required");
  int T0 = heads[0].U.rows, d0 = heads[0].U.cols;
  for (const auto& h : heads) {
    if (h.U.rows != T0 || h.U.cols != d0) throw DimError("ModelParams: inconsistent U shape");
    if (h.W.rows != d0 || h.W.cols != d0) throw DimError("ModelParams: W must be d x d");
  }
}

Matrix attention_matrix(const TokenMatrix& x, const Matrix& W) {
  if (W.rows != x.d() || W.cols != x.d()) throw DimError("attention_matrix: W must be d x d");
  Matrix logits = matmul_nt(matmul(x.X, W), x.X);  // X W X^T
  Matrix A(x.T(), x.T());
  for (int t = 0; t < x.T(); ++t) {
    Vec p = softmax(logits.row(t));
    for (int i = 0; i < x.T(); ++i) A(t, i) = p[i];
  }
  return A;
}

double forward_single(const TokenMatrix& x, const HeadParams& th) {
  if (th.U.rows != x.T() || th.U.cols != x.d()) throw DimError("forward_single: U shape mismatch");
  Matrix A = attention_matrix(x, th.W);
  return fro_inner(th.U, matmul(A, x.X));
}

double forward_multi(const TokenMatrix& x, const ModelParams& th) {
  th.check_consistent();
  double s = 0;
  for (const auto& h : th.heads) s += forward_single(x, h);
  return s / std::sqrt(static_cast<double>(th.H()));
}

ParamNorms param_norms(const ModelParams& th) {
  ParamNorms r;
  double e2 = 0;
  for (const auto& h : th.heads) {
    double h2 = head_sq_norm(h);
    e2 += h2;
    r.max_per_head = std::max(r.max_per_head, std::sqrt(h2));
    double u2 = 0;
    for (double v : h.U.a) u2 += v * v;
    r.max_U_frobenius = std::max(r.max_U_frobenius, std::sqrt(u2));
  }
  r.euclid = std::sqrt(e2);
  return r;
}

Vec flatten_head(const HeadParams& th) {
  Vec v;
  v.reserve(th.U.a.size() + th.W.a.size());
  v.insert(v.end(), th.U.a.begin(), th.U.a.end());
  v.insert(v.end(), th.W.a.begin(), th.W.a.end());
  return v;
}

HeadParams unflatten_head(const Vec& v, int T, int d) {
  size_t need = static_cast<size_t>(T) * d + static_cast<size_t>(d) * d;
  if (v.size() != need) throw DimError("unflatten_head: length mismatch");
  HeadParams h{Matrix(T, d), Matrix(d, d)};
  std::copy(v.begin(), v.begin() + static_cast<long>(T) * d, h.U.a.begin());
  std::copy(v.begin() + static_cast<long>(T) * d, v.end(), h.W.a.begin());
  return h;
}

Vec flatten(const ModelParams& th) {
  Vec v;
  for (const auto& h : th.heads) {
    Vec hv = flatten_head(h);
    v.insert(v.end(), hv.begin(), hv.end());
  }
  return v;
}

ModelParams unflatten(const Vec& v, int T, int d, int H) {
  size_t per = static_cast<size_t>(T) * d + static_cast<size_t>(d) * d;
  if (v.size() != per * H) throw DimError("unflatten: length mismatch");
  ModelParams mp;
  for (int h = 0; h < H; ++h)
    mp.heads.push_back(unflatten_head(Vec(v.begin() + h * per, v.begin() + (h + 1) * per), T, d));
  return mp;
}

ModelParams zeros_model(int T, int d, int H) {
  ModelParams mp;
  for (int h = 0; h < H; ++h) mp.heads.push_back(HeadParams{Matrix(T, d), Matrix(d, d)});
  return mp;
}

double head_sq_norm(const HeadParams& th) {
  double s = 0;
  for (double v : th.U.a) s += v * v;
  for (double v : th.W.a) s += v * v;
  return s;
}

}  // namespace mha
