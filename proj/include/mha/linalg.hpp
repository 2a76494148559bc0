#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace mha {

struct DimError : std::runtime_error {
  explicit DimError(const std::string& m) : std::runtime_error(m) {}
};

struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& m) : std::runtime_error(m) {}
};

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& m) : std::runtime_error(m) {}
};

using Vec = std::vector<double>;

struct Matrix {
  int rows = 0, cols = 0;
  Vec a;

  Matrix() = default;
  Matrix(int r, int c, double fill = 0.0);

  double& operator()(int i, int j) { return a[static_cast<size_t>(i) * cols + j]; }
  double operator()(int i, int j) const { return a[static_cast<size_t>(i) * cols + j]; }

  Vec row(int i) const;
  Vec col(int j) const;
  bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }
  bool finite() const;
};

Matrix identity(int n);
Matrix transpose(const Matrix& A);
Matrix matmul(const Matrix& A, const Matrix& B);
Matrix matmul_nt(const Matrix& A, const Matrix& B);  // A * B^T
Matrix matmul_tn(const Matrix& A, const Matrix& B);  // A^T * B
Matrix add(const Matrix& A, const Matrix& B);
Matrix sub(const Matrix& A, const Matrix& B);
Matrix scale(const Matrix& A, double c);
void axpy(Matrix& Y, double c, const Matrix& X);  // Y += c*X
Matrix outer(const Vec& u, const Vec& v);

Vec matvec(const Matrix& A, const Vec& x);   // A x
Vec matvec_t(const Matrix& A, const Vec& x); // A^T x
double dot(const Vec& u, const Vec& v);
double norm2(const Vec& v);
double norm_inf(const Vec& v);
void vaxpy(Vec& y, double c, const Vec& x);  // y += c*x
double fro_inner(const Matrix& A, const Matrix& B);

// softmax with max-subtraction; probability vector summing to 1
Vec softmax(const Vec& b);

// diag(p) - p p^T at p = softmax(b); symmetric, rows sum to 0, PSD
Matrix softmax_jacobian(const Vec& b);

struct Norms {
  double frobenius = 0;
  double spectral = 0;
  double two_inf = 0;  // max row 2-norm
  double one_inf = 0;  // max |entry|
  double one_two = 0;  // max column 2-norm
  bool spectral_converged = true;
  int spectral_iters = 0;
};

Norms norms(const Matrix& A);
// power iteration on A^T A, tol 1e-10, cap 10000 iterations, seeded start
double spectral_norm(const Matrix& A, bool* converged = nullptr, int* iters = nullptr);

struct EigExtremes {
  double lambda_min = 0, lambda_max = 0;
  double residual = 0;  // max over the two extreme pairs of ||S v - lambda v||
};

// dense symmetric eigensolve; input symmetrized as (S+S^T)/2; n <= 2000
EigExtremes sym_eig_extremes(const Matrix& S);
// all eigenvalues ascending (same solver); used by dense Hessian checks
Vec sym_eig_values(const Matrix& S);

// counter-based generator: same (seed, stream) gives the same sequence on
// every platform for the same build; distinct streams are independent
struct Rng {
  uint64_t skey = 0;
  uint64_t ctr = 0;

  explicit Rng(uint64_t seed, uint64_t stream = 0);
  uint64_t next_u64();
  double uniform();                       // [0,1)
  double uniform(double lo, double hi);
  double normal();                        // Box-Muller, two draws per call
  int sign();                             // +1 or -1 equiprobable
  uint64_t below(uint64_t n);             // [0,n) unbiased via rejection
};

}  // namespace mha
