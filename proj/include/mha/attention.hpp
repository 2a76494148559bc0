#pragma once

#include "mha/linalg.hpp"

namespace mha {

// token matrix X (T x d, row t is token x_t); R is the max row 2-norm,
// always recomputed from X rather than trusted
struct TokenMatrix {
  Matrix X;
  double R = 0;

  explicit TokenMatrix(Matrix X_);
  int T() const { return X.rows; }
  int d() const { return X.cols; }
};

// single head: decoder U (T x d, value absorbed) and key-query product W (d x d)
struct HeadParams {
  Matrix U;
  Matrix W;
};

struct ModelParams {
  std::vector<HeadParams> heads;

  int H() const { return static_cast<int>(heads.size()); }
  int T() const { return heads.empty() ? 0 : heads[0].U.rows; }
  int d() const { return heads.empty() ? 0 : heads[0].U.cols; }
  void check_consistent() const;
};

struct LabeledExample {
  TokenMatrix x;
  int y;  // +1 or -1
};

// row t = softmax(X W^T x_t); row-stochastic
Matrix attention_matrix(const TokenMatrix& x, const Matrix& W);

// <U, softmax(X W X^T) X>
double forward_single(const TokenMatrix& x, const HeadParams& th);

// (1/sqrt(H)) sum_h forward_single
double forward_multi(const TokenMatrix& x, const ModelParams& th);

struct ParamNorms {
  double euclid = 0;           // ||flatten(theta)||_2
  double max_per_head = 0;     // max_h ||theta_h|| = ||theta||_{2,inf}
  double max_U_frobenius = 0;  // max_h ||U_h||_F
};

ParamNorms param_norms(const ModelParams& th);

// flattening order: per head, U row-major then W row-major; heads in order
Vec flatten_head(const HeadParams& th);
HeadParams unflatten_head(const Vec& v, int T, int d);
Vec flatten(const ModelParams& th);
ModelParams unflatten(const Vec& v, int T, int d, int H);

ModelParams zeros_model(int T, int d, int H);
double head_sq_norm(const HeadParams& th);

}  // namespace mha
