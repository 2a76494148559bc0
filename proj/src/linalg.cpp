#include "mha/linalg.hpp"

#include <algorithm>
#include <cmath>

namespace mha {

Matrix::Matrix(int r, int c, double fill) : rows(r), cols(c) {
  if (r < 0 || c < 0) throw DimError("negative matrix dimension");
  a.assign(static_cast<size_t>(r) * c, fill);
}

Vec Matrix::row(int i) const {
  if (i < 0 || i >= rows) throw DimError("row index out of range");
  return Vec(a.begin() + static_cast<size_t>(i) * cols,
             a.begin() + static_cast<size_t>(i + 1) * cols);
}

Vec Matrix::col(int j) const {
  if (j < 0 || j >= cols) throw DimError("col index out of range");
  Vec v(rows);
  for (int i = 0; i < rows; ++i) v[i] = (*this)(i, j);
  return v;
}

bool Matrix::finite() const {
  for (double x : a)
    if (!std::isfinite(x)) return false;
  return true;
}

Matrix identity(int n) {
  Matrix I(n, n);
  for (int i = 0; i < n; ++i) I(i, i) = 1.0;
  return I;
}

Matrix transpose(const Matrix& A) {
  Matrix B(A.cols, A.rows);
  for (int i = 0; i < A.rows; ++i)
    for (int j = 0; j < A.cols; ++j) B(j, i) = A(i, j);
  return B;
}

Matrix matmul(const Matrix& A, const Matrix& B) {
  if (A.cols != B.rows) throw DimError("matmul shape mismatch");
  Matrix C(A.rows, B.cols);
  for (int i = 0; i < A.rows; ++i)
    for (int k = 0; k < A.cols; ++k) {
      double aik = A(i, k);
      if (aik == 0.0) continue;
      for (int j = 0; j < B.cols; ++j) C(i, j) += aik * B(k, j);
    }
  return C;
}

Matrix matmul_nt(const Matrix& A, const Matrix& B) {
  if (A.cols != B.cols) throw DimError("matmul_nt shape mismatch");
  Matrix C(A.rows, B.rows);
  for (int i = 0; i < A.rows; ++i)
    for (int j = 0; j < B.rows; ++j) {
      double s = 0;
      for (int k = 0; k < A.cols; ++k) s += A(i, k) * B(j, k);
      C(i, j) = s;
    }
  return C;
}

Matrix matmul_tn(const Matrix& A, const Matrix& B) {
  if (A.rows != B.rows) throw DimError("matmul_tn shape mismatch");
  Matrix C(A.cols, B.cols);
  for (int k = 0; k < A.rows; ++k)
    for (int i = 0; i < A.cols; ++i) {
      double aki = A(k, i);
      if (aki == 0.0) continue;
      for (int j = 0; j < B.cols; ++j) C(i, j) += aki * B(k, j);
    }
  return C;
}

Matrix add(const Matrix& A, const Matrix& B) {
  if (!A.same_shape(B)) throw DimError("add shape mismatch");
  Matrix C = A;
  for (size_t i = 0; i < C.a.size(); ++i) C.a[i] += B.a[i];
  return C;
}

Matrix sub(const Matrix& A, const Matrix& B) {
  if (!A.same_shape(B)) throw DimError("sub shape mismatch");
  Matrix C = A;
  for (size_t i = 0; i < C.a.size(); ++i) C.a[i] -= B.a[i];
  return C;
}

Matrix scale(const Matrix& A, double c) {
  Matrix C = A;
  for (double& x : C.a) x *= c;
  return C;
}

void axpy(Matrix& Y, double c, const Matrix& X) {
  if (!Y.same_shape(X)) throw DimError("axpy shape mismatch");
  for (size_t i = 0; i < Y.a.size(); ++i) Y.a[i] += c * X.a[i];
}

Matrix outer(const Vec& u, const Vec& v) {
  Matrix C(static_cast<int>(u.size()), static_cast<int>(v.size()));
  for (size_t i = 0; i < u.size(); ++i)
    for (size_t j = 0; j < v.size(); ++j) C(static_cast<int>(i), static_cast<int>(j)) = u[i] * v[j];
  return C;
}

Vec matvec(const Matrix& A, const Vec& x) {
  if (A.cols != static_cast<int>(x.size())) throw DimError("matvec shape mismatch");
  Vec y(A.rows, 0.0);
  for (int i = 0; i < A.rows; ++i) {
    double s = 0;
    for (int j = 0; j < A.cols; ++j) s += A(i, j) * x[j];
    y[i] = s;
  }
  return y;
}

Vec matvec_t(const Matrix& A, const Vec& x) {
  if (A.rows != static_cast<int>(x.size())) throw DimError("matvec_t shape mismatch");
  Vec y(A.cols, 0.0);
  for (int i = 0; i < A.rows; ++i) {
    double xi = x[i];
    if (xi == 0.0) continue;
    for (int j = 0; j < A.cols; ++j) y[j] += A(i, j) * xi;
  }
  return y;
}

double dot(const Vec& u, const Vec& v) {
  if (u.size() != v.size()) throw DimError("dot length mismatch");
  double s = 0;
  for (size_t i = 0; i < u.size(); ++i) s += u[i] * v[i];
  return s;
}

double norm2(const Vec& v) { return std::sqrt(dot(v, v)); }

double norm_inf(const Vec& v) {
  double m = 0;
  for (double x : v) m = std::max(m, std::fabs(x));
  return m;
}

void vaxpy(Vec& y, double c, const Vec& x) {
  if (y.size() != x.size()) throw DimError("vaxpy length mismatch");
  for (size_t i = 0; i < y.size(); ++i) y[i] += c * x[i];
}

double fro_inner(const Matrix& A, const Matrix& B) {
  if (!A.same_shape(B)) throw DimError("fro_inner shape mismatch");
  double s = 0;
  for (size_t i = 0; i < A.a.size(); ++i) s += A.a[i] * B.a[i];
  return s;
}

Vec softmax(const Vec& b) {
  if (b.empty()) throw DimError("softmax of empty vector");
  double m = b[0];
  for (double x : b) m = std::max(m, x);
  Vec p(b.size());
  double z = 0;
  for (size_t i = 0; i < b.size(); ++i) {
    p[i] = std::exp(b[i] - m);
    z += p[i];
  }
  for (double& x : p) x /= z;
  return p;
}

Matrix softmax_jacobian(const Vec& b) {
  Vec p = softmax(b);
  int T = static_cast<int>(p.size());
  Matrix J(T, T);
  for (int i = 0; i < T; ++i)
    for (int j = 0; j < T; ++j) J(i, j) = (i == j ? p[i] : 0.0) - p[i] * p[j];
  return J;
}

double spectral_norm(const Matrix& A, bool* converged, int* iters) {
  if (A.rows == 0 || A.cols == 0) throw DimError("spectral norm of empty matrix");
  Rng rng(0xC0FFEEULL);
  Vec v(A.cols);
  for (double& x : v) x = rng.uniform(-1.0, 1.0);
  double nv = norm2(v);
  if (nv == 0) v[0] = 1.0; else for (double& x : v) x /= nv;

  const double tol = 1e-10;
  const int cap = 10000;
  double sigma = 0;
  bool ok = false;
  int it = 0;
  for (; it < cap; ++it) {
    Vec Av = matvec(A, v);
    double s = norm2(Av);
    Vec w = matvec_t(A, Av);  // A^T A v
    double nw = norm2(w);
    if (nw == 0) { sigma = 0; ok = true; ++it; break; }
    for (size_t i = 0; i < w.size(); ++i) v[i] = w[i] / nw;
    if (std::fabs(s - sigma) <= tol * std::max(1.0, s)) { sigma = s; ok = true; ++it; break; }
    sigma = s;
  }
  if (converged) *converged = ok;
  if (iters) *iters = it;
  return sigma;
}

Norms norms(const Matrix& A) {
  if (A.rows == 0 || A.cols == 0) throw DimError("norms of empty matrix");
  Norms r;
  double f2 = 0;
  for (double x : A.a) f2 += x * x;
  r.frobenius = std::sqrt(f2);
  for (int i = 0; i < A.rows; ++i) {
    double s = 0;
    for (int j = 0; j < A.cols; ++j) s += A(i, j) * A(i, j);
    r.two_inf = std::max(r.two_inf, std::sqrt(s));
  }
  for (double x : A.a) r.one_inf = std::max(r.one_inf, std::fabs(x));
  for (int j = 0; j < A.cols; ++j) {
    double s = 0;
    for (int i = 0; i < A.rows; ++i) s += A(i, j) * A(i, j);
    r.one_two = std::max(r.one_two, std::sqrt(s));
  }
  r.spectral = spectral_norm(A, &r.spectral_converged, &r.spectral_iters);
  return r;
}

namespace {

// Householder tridiagonalization with accumulation (tred2 lineage)
void tred2(std::vector<Vec>& z, Vec& d, Vec& e) {
  int n = static_cast<int>(d.size());
  for (int i = n - 1; i > 0; --i) {
    int l = i - 1;
    double h = 0, s = 0;
    if (l > 0) {
      for (int k = 0; k <= l; ++k) s += std::fabs(z[i][k]);
      if (s == 0.0) {
        e[i] = z[i][l];
      } else {
        for (int k = 0; k <= l; ++k) {
          z[i][k] /= s;
          h += z[i][k] * z[i][k];
        }
        double f = z[i][l];
        double g = (f >= 0.0 ? -std::sqrt(h) : std::sqrt(h));
        e[i] = s * g;
        h -= f * g;
        z[i][l] = f - g;
        f = 0.0;
        for (int j = 0; j <= l; ++j) {
          z[j][i] = z[i][j] / h;
          g = 0.0;
          for (int k = 0; k <= j; ++k) g += z[j][k] * z[i][k];
          for (int k = j + 1; k <= l; ++k) g += z[k][j] * z[i][k];
          e[j] = g / h;
          f += e[j] * z[i][j];
        }
        double hh = f / (h + h);
        for (int j = 0; j <= l; ++j) {
          f = z[i][j];
          e[j] = g = e[j] - hh * f;
          for (int k = 0; k <= j; ++k) z[j][k] -= f * e[k] + g * z[i][k];
        }
      }
    } else {
      e[i] = z[i][l];
    }
    d[i] = h;
  }
  d[0] = 0.0;
  e[0] = 0.0;
  for (int i = 0; i < n; ++i) {
    int l = i - 1;
    if (d[i] != 0.0) {
      for (int j = 0; j <= l; ++j) {
        double g = 0.0;
        for (int k = 0; k <= l; ++k) g += z[i][k] * z[k][j];
        for (int k = 0; k <= l; ++k) z[k][j] -= g * z[k][i];
      }
    }
    d[i] = z[i][i];
    z[i][i] = 1.0;
    for (int j = 0; j <= l; ++j) z[j][i] = z[i][j] = 0.0;
  }
}

double pythag(double a, double b) {
  double aa = std::fabs(a), ab = std::fabs(b);
  if (aa > ab) {
    double r = ab / aa;
    return aa * std::sqrt(1.0 + r * r);
  }
  if (ab == 0.0) return 0.0;
  double r = aa / ab;
  return ab * std::sqrt(1.0 + r * r);
}

// implicit-shift QL on the tridiagonal form (tql2 lineage)
void tql2(std::vector<Vec>& z, Vec& d, Vec& e) {
  int n = static_cast<int>(d.size());
  for (int i = 1; i < n; ++i) e[i - 1] = e[i];
  e[n - 1] = 0.0;
  for (int l = 0; l < n; ++l) {
    int iter = 0;
    int m;
    do {
      for (m = l; m < n - 1; ++m) {
        double dd = std::fabs(d[m]) + std::fabs(d[m + 1]);
        if (std::fabs(e[m]) <= 1e-300 + 2.3e-16 * dd) break;
      }
      if (m != l) {
        if (iter++ == 60) throw NumericError("sym_eig: QL iteration did not converge");
        double g = (d[l + 1] - d[l]) / (2.0 * e[l]);
        double r = pythag(g, 1.0);
        g = d[m] - d[l] + e[l] / (g + (g >= 0.0 ? std::fabs(r) : -std::fabs(r)));
        double s = 1.0, c = 1.0, p = 0.0;
        int i = m - 1;
        for (; i >= l; --i) {
          double f = s * e[i];
          double b = c * e[i];
          r = pythag(f, g);
          e[i + 1] = r;
          if (r == 0.0) {
            d[i + 1] -= p;
            e[m] = 0.0;
            break;
          }
          s = f / r;
          c = g / r;
          g = d[i + 1] - p;
          r = (d[i] - g) * s + 2.0 * c * b;
          p = s * r;
          d[i + 1] = g + p;
          g = c * r - b;
          for (int k = 0; k < n; ++k) {
            f = z[k][i + 1];
            z[k][i + 1] = s * z[k][i] + c * f;
            z[k][i] = c * z[k][i] - s * f;
          }
        }
        if (r == 0.0 && i >= l) continue;
        d[l] -= p;
        e[l] = g;
        e[m] = 0.0;
      }
    } while (m != l);
  }
}

struct EigFull {
  Vec values;              // ascending
  std::vector<Vec> vecs;   // vecs[k] = eigenvector for values[k]
};

EigFull sym_eig_full(const Matrix& S) {
  if (S.rows != S.cols) throw DimError("sym_eig: matrix not square");
  int n = S.rows;
  if (n == 0) throw DimError("sym_eig: empty matrix");
  if (n > 2000) throw DimError("sym_eig: n > 2000; use HVP-based power iteration instead");
  std::vector<Vec> z(n, Vec(n));
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) z[i][j] = 0.5 * (S(i, j) + S(j, i));
  Vec d(n), e(n);
  if (n == 1) {
    d[0] = z[0][0];
    z[0][0] = 1.0;
  } else {
    tred2(z, d, e);
    tql2(z, d, e);
  }
  std::vector<int> idx(n);
  for (int i = 0; i < n; ++i) idx[i] = i;
  std::sort(idx.begin(), idx.end(), [&](int a, int b) { return d[a] < d[b]; });
  EigFull out;
  out.values.resize(n);
  out.vecs.assign(n, Vec(n));
  for (int k = 0; k < n; ++k) {
    out.values[k] = d[idx[k]];
    for (int i = 0; i < n; ++i) out.vecs[k][i] = z[i][idx[k]];
  }
  return out;
}

}  // namespace

EigExtremes sym_eig_extremes(const Matrix& S) {
  EigFull f = sym_eig_full(S);
  int n = static_cast<int>(f.values.size());
  Matrix A(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) A(i, j) = 0.5 * (S(i, j) + S(j, i));
  double fn = 0;
  for (double x : A.a) fn += x * x;
  fn = std::sqrt(fn);
  EigExtremes r;
  r.lambda_min = f.values.front();
  r.lambda_max = f.values.back();
  for (int which : {0, n - 1}) {
    Vec Av = matvec(A, f.vecs[which]);
    vaxpy(Av, -f.values[which], f.vecs[which]);
    r.residual = std::max(r.residual, norm2(Av));
  }
  if (r.residual > 1e-8 * std::max(1.0, fn))
    throw NumericError("sym_eig_extremes: residual exceeds 1e-8*||S||");
  return r;
}

Vec sym_eig_values(const Matrix& S) { return sym_eig_full(S).values; }

namespace {
inline uint64_t mix64(uint64_t x) {
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}
constexpr uint64_t kGolden = 0x9e3779b97f4a7c15ULL;
}  // namespace

Rng::Rng(uint64_t seed, uint64_t stream) {
  skey = mix64(seed + kGolden * (stream + 1));
  skey = mix64(skey ^ (stream + 0xda442d24991f2a4dULL));
}

uint64_t Rng::next_u64() { return mix64(skey + kGolden * (++ctr)); }

double Rng::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double Rng::normal() {
  double u1 = uniform();
  double u2 = uniform();
  double r = std::sqrt(-2.0 * std::log1p(-u1));
  return r * std::cos(2.0 * 3.14159265358979323846 * u2);
}

int Rng::sign() { return (next_u64() >> 63) ? 1 : -1; }

uint64_t Rng::below(uint64_t n) {
  if (n == 0) throw DimError("Rng::below(0)");
  uint64_t threshold = (~uint64_t{0} - n + 1) % n;  // 2^64 mod n
  for (;;) {
    uint64_t r = next_u64();
    if (r >= threshold) return r % n;
  }
}

}  // namespace mha
