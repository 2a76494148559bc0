#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "mha/attention.hpp"
#include "oracles.hpp"

using namespace mha;

namespace {

Matrix rand_matrix(Rng& rng, int r, int c, double scale = 1.0) {
  Matrix m(r, c);
  for (double& v : m.a) v = rng.uniform(-scale, scale);
  return m;
}

// compositional re-implementation of forward_single
double forward_by_composition(const TokenMatrix& x, const HeadParams& th) {
  Matrix A = attention_matrix(x, th.W);
  return fro_inner(th.U, matmul(A, x.X));
}

}  // namespace

TEST_CASE("token matrix recomputes R and validates shape") {
  Matrix X(2, 3);
  X(0, 0) = 3;
  X(0, 1) = 4;  // row norm 5
  X(1, 2) = 1;
  TokenMatrix tm(X);
  CHECK(tm.R == doctest::Approx(5.0).epsilon(1e-15));
  CHECK(tm.T() == 2);
  CHECK(tm.d() == 3);
  CHECK_THROWS_AS(TokenMatrix(Matrix(0, 3)), DimError);
}

TEST_CASE("attention matrix is row-stochastic; W=0 uniform; T=1 trivial") {
  Rng rng(21, 0);
  Matrix X = rand_matrix(rng, 4, 3);
  TokenMatrix tm(X);

  Matrix A0 = attention_matrix(tm, Matrix(3, 3));
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) CHECK(A0(i, j) == doctest::Approx(0.25).epsilon(1e-14));

  Matrix W = rand_matrix(rng, 3, 3);
  Matrix A = attention_matrix(tm, W);
  for (int i = 0; i < 4; ++i) {
    double rs = 0;
    for (int j = 0; j < 4; ++j) {
      CHECK(A(i, j) >= 0.0);
      rs += A(i, j);
    }
    CHECK(rs == doctest::Approx(1.0).epsilon(1e-13));
  }

  // row t is softmax of X W^T x_t
  for (int t = 0; t < 4; ++t) {
    Vec logits = matvec(X, matvec_t(W, X.row(t)));
    Vec p = softmax(logits);
    for (int j = 0; j < 4; ++j) CHECK(A(t, j) == doctest::Approx(p[j]).epsilon(1e-14));
  }

  TokenMatrix one(rand_matrix(rng, 1, 3));
  Matrix A1 = attention_matrix(one, W);
  CHECK(A1.rows == 1);
  CHECK(A1(0, 0) == 1.0);

  CHECK_THROWS_AS(attention_matrix(tm, Matrix(2, 2)), DimError);
}

TEST_CASE("forward_single: uniform-attention closed form, U=0, compositional oracle") {
  Rng rng(22, 0);
  Matrix X = rand_matrix(rng, 3, 2);
  TokenMatrix tm(X);
  Matrix U = rand_matrix(rng, 3, 2);

  // W=0: (1/T) sum_t sum_t' u_t^T x_t'
  double expect = 0;
  for (int t = 0; t < 3; ++t)
    for (int tp = 0; tp < 3; ++tp) expect += dot(U.row(t), X.row(tp));
  expect /= 3;
  CHECK(forward_single(tm, {U, Matrix(2, 2)}) == doctest::Approx(expect).epsilon(1e-14));

  CHECK(forward_single(tm, {Matrix(3, 2), rand_matrix(rng, 2, 2)}) == 0.0);

  for (int rep = 0; rep < 10; ++rep) {
    HeadParams th{rand_matrix(rng, 3, 2), rand_matrix(rng, 2, 2)};
    double a = forward_single(tm, th), b = forward_by_composition(tm, th);
    CHECK(a == doctest::Approx(b).epsilon(1e-14));
  }
}

TEST_CASE("forward_multi scaling, H=1, linearity in U, head permutation") {
  Rng rng(23, 0);
  Matrix X = rand_matrix(rng, 4, 3);
  TokenMatrix tm(X);
  HeadParams th{rand_matrix(rng, 4, 3), rand_matrix(rng, 3, 3)};

  ModelParams single;
  single.heads = {th};
  CHECK(forward_multi(tm, single) == forward_single(tm, th));

  ModelParams four;
  four.heads = {th, th, th, th};
  CHECK(forward_multi(tm, four) ==
        doctest::Approx(2.0 * forward_single(tm, th)).epsilon(1e-14));

  ModelParams zeroU;
  for (int h = 0; h < 3; ++h) zeroU.heads.push_back({Matrix(4, 3), rand_matrix(rng, 3, 3)});
  CHECK(forward_multi(tm, zeroU) == 0.0);

  // linearity in U at fixed W
  ModelParams a = oracle::rand_model(rng, 4, 3, 2), b = a;
  ModelParams sum = a;
  for (int h = 0; h < 2; ++h) {
    b.heads[h].U = rand_matrix(rng, 4, 3);
    sum.heads[h].U = add(a.heads[h].U, b.heads[h].U);
  }
  CHECK(forward_multi(tm, sum) ==
        doctest::Approx(forward_multi(tm, a) + forward_multi(tm, b)).epsilon(1e-12));

  ModelParams perm = a;
  std::swap(perm.heads[0], perm.heads[1]);
  CHECK(forward_multi(tm, perm) == doctest::Approx(forward_multi(tm, a)).epsilon(1e-15));
}

TEST_CASE("param norms: zeros, identity head, pythagoras, ordering") {
  ModelParams z = zeros_model(3, 2, 2);
  ParamNorms zn = param_norms(z);
  CHECK(zn.euclid == 0.0);
  CHECK(zn.max_per_head == 0.0);
  CHECK(zn.max_U_frobenius == 0.0);

  ModelParams eye;
  eye.heads.push_back({identity(2), Matrix(2, 2)});
  ParamNorms en = param_norms(eye);
  CHECK(en.euclid == doctest::Approx(std::sqrt(2.0)).epsilon(1e-15));
  CHECK(en.max_per_head == doctest::Approx(std::sqrt(2.0)).epsilon(1e-15));
  CHECK(en.max_U_frobenius == doctest::Approx(std::sqrt(2.0)).epsilon(1e-15));

  Rng rng(24, 0);
  ModelParams th = oracle::rand_model(rng, 3, 2, 3);
  ParamNorms n = param_norms(th);
  double sq = 0;
  for (const auto& h : th.heads) sq += head_sq_norm(h);
  CHECK(n.euclid * n.euclid == doctest::Approx(sq).epsilon(1e-12));
  CHECK(n.max_U_frobenius <= n.max_per_head + 1e-15);
  CHECK(n.max_per_head <= n.euclid + 1e-15);
}

TEST_CASE("flatten round-trips exactly and fixes the ordering") {
  Rng rng(25, 0);
  ModelParams th = oracle::rand_model(rng, 3, 2, 2);
  Vec v = flatten(th);
  REQUIRE(v.size() == 2u * (3 * 2 + 2 * 2));
  CHECK(v[0] == th.heads[0].U(0, 0));
  CHECK(v[3 * 2] == th.heads[0].W(0, 0));  // W starts after T*d U entries
  CHECK(v[3 * 2 + 2 * 2] == th.heads[1].U(0, 0));

  ModelParams back = unflatten(v, 3, 2, 2);
  for (int h = 0; h < 2; ++h) {
    for (size_t i = 0; i < th.heads[h].U.a.size(); ++i)
      CHECK(back.heads[h].U.a[i] == th.heads[h].U.a[i]);
    for (size_t i = 0; i < th.heads[h].W.a.size(); ++i)
      CHECK(back.heads[h].W.a[i] == th.heads[h].W.a[i]);
  }

  HeadParams hp = unflatten_head(flatten_head(th.heads[1]), 3, 2);
  CHECK(hp.U(2, 1) == th.heads[1].U(2, 1));
  CHECK(hp.W(1, 0) == th.heads[1].W(1, 0));

  CHECK_THROWS_AS(unflatten(Vec(5), 3, 2, 2), DimError);
}

TEST_CASE("inconsistent heads are rejected") {
  ModelParams bad;
  bad.heads.push_back({Matrix(3, 2), Matrix(2, 2)});
  bad.heads.push_back({Matrix(4, 2), Matrix(2, 2)});
  CHECK_THROWS_AS(bad.check_consistent(), DimError);

  ModelParams badW;
  badW.heads.push_back({Matrix(3, 2), Matrix(3, 2)});
  CHECK_THROWS_AS(badW.check_consistent(), DimError);
}
