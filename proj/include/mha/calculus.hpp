#pragma once

#include "mha/attention.hpp"

namespace mha {

struct HeadGradient {
  Matrix dU;  // T x d
  Matrix dW;  // d x d
};

// dense per-head Hessian, blocks [UU, UW; WU, WW] in the flattening order
// (U row-major then W row-major); UU is identically zero
struct HeadHessian {
  Matrix full;  // (Td+d^2) x (Td+d^2)
  int T = 0, d = 0;
};

HeadGradient grad_single(const TokenMatrix& x, const HeadParams& th);

// per-head grad_single scaled by 1/sqrt(H)
std::vector<HeadGradient> grad_multi(const TokenMatrix& x, const ModelParams& th);

// nabla_W <a, nabla_U Phi b>; a has length T, b has length d
Matrix hess_bilinear_UW(const TokenMatrix& x, const HeadParams& th, const Vec& a, const Vec& b);

// nabla_W <c, nabla_W Phi b>; c and b have length d
Matrix hess_bilinear_WW(const TokenMatrix& x, const HeadParams& th, const Vec& c, const Vec& b);

// dense assembly; requires Td + d^2 <= 2000
HeadHessian hess_assemble(const TokenMatrix& x, const HeadParams& th);

// Hessian-vector product of the single-head model without dense assembly
HeadGradient hess_vec(const TokenMatrix& x, const HeadParams& th, const HeadParams& v);

// 2 ||X||_{2,inf}^2 sum_t ||X u_t||_inf + sqrt(T) ||X||_{2,inf}
double model_grad_bound(const TokenMatrix& x, const HeadParams& th);

// 6 d^2 ||X||_{2,inf} ||X||_{1,inf}^3 sum_t ||X u_t||_inf
//   + 2 d sqrt(T d) ||X||_{2,inf} ||X||_{1,inf}^2
double model_hess_bound(const TokenMatrix& x, const HeadParams& th);

}  // namespace mha
