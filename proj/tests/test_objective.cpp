#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "mha/objective.hpp"
#include "oracles.hpp"

using namespace mha;

namespace {

Matrix rand_matrix(Rng& rng, int r, int c, double scale = 1.0) {
  Matrix m(r, c);
  for (double& v : m.a) v = rng.uniform(-scale, scale);
  return m;
}

}  // namespace

TEST_CASE("logistic: exact values at 0, self-boundedness, curvature cap, stability") {
  Logistic l0 = logistic(0);
  CHECK(l0.loss == doctest::Approx(std::log(2.0)).epsilon(1e-16));
  CHECK(l0.d1 == doctest::Approx(-0.5).epsilon(1e-16));
  CHECK(l0.d2 == doctest::Approx(0.25).epsilon(1e-16));

  for (double t = -30; t <= 30; t += 0.01) {
    Logistic l = logistic(t);
    CHECK(std::fabs(l.d1) <= l.loss + 1e-15);
    CHECK(l.d2 <= 0.25 + 1e-15);
    CHECK(l.d2 >= 0.0);
    CHECK(l.loss >= 0.0);
  }

  // derivative values against finite differences of the loss
  for (double t : {-7.3, -0.9, 0.4, 2.2, 11.0}) {
    const double h = 1e-6;
    double fd1 = (logistic(t + h).loss - logistic(t - h).loss) / (2 * h);
    double fd2 = (logistic(t + h).d1 - logistic(t - h).d1) / (2 * h);
    CHECK(logistic(t).d1 == doctest::Approx(fd1).epsilon(1e-8));
    CHECK(logistic(t).d2 == doctest::Approx(fd2).epsilon(1e-6));
  }

  CHECK(std::isfinite(logistic(800).loss));
  CHECK(logistic(800).loss >= 0.0);
  CHECK(logistic(-800).loss == doctest::Approx(800.0).epsilon(1e-12));
}

TEST_CASE("dataset validation") {
  CHECK_THROWS_AS(Dataset::from({}), DimError);

  Rng rng(41, 0);
  Matrix X = rand_matrix(rng, 3, 2);
  std::vector<LabeledExample> bad_label = {{TokenMatrix(X), 2}};
  CHECK_THROWS_AS(Dataset::from(std::move(bad_label)), DimError);

  std::vector<LabeledExample> ragged;
  ragged.push_back({TokenMatrix(rand_matrix(rng, 3, 2)), 1});
  ragged.push_back({TokenMatrix(rand_matrix(rng, 4, 2)), -1});
  CHECK_THROWS_AS(Dataset::from(std::move(ragged)), DimError);

  Matrix big(2, 2);
  big(0, 0) = 3;
  big(1, 1) = 7;
  std::vector<LabeledExample> ok = {{TokenMatrix(big), 1},
                                    {TokenMatrix(rand_matrix(rng, 2, 2)), -1}};
  Dataset data = Dataset::from(std::move(ok));
  CHECK(data.R == doctest::Approx(7.0));
  CHECK(data.n() == 2);
  CHECK(data.T == 2);
  CHECK(data.d == 2);
}

TEST_CASE("empirical risk: exact log 2 at zero, compositional oracle, monotone margin") {
  Rng rng(42, 0);
  Dataset data = oracle::rand_dataset(rng, 4, 3, 5);

  CHECK(empirical_risk(data, zeros_model(4, 3, 2)) == std::log(2.0));

  ModelParams th = oracle::rand_model(rng, 4, 3, 2);
  double direct = 0;
  for (const auto& e : data.examples)
    direct += logistic(e.y * forward_multi(e.x, th)).loss;
  direct /= data.n();
  CHECK(empirical_risk(data, th) == doctest::Approx(direct).epsilon(1e-15));

  // scaling a correct classifier up drives the risk down monotonically
  std::vector<LabeledExample> one = {{data.examples[0].x, data.examples[0].y}};
  Dataset single = Dataset::from(std::move(one));
  ModelParams dir = zeros_model(4, 3, 1);
  for (int t = 0; t < 4; ++t)
    for (int c = 0; c < 3; ++c) {
      double mean = 0;
      for (int tp = 0; tp < 4; ++tp) mean += single.examples[0].x.X(tp, c);
      dir.heads[0].U(t, c) = single.examples[0].y * mean / 4;
    }
  double prev = empirical_risk(single, zeros_model(4, 3, 1));
  for (double s : {0.5, 1.0, 2.0, 4.0, 8.0}) {
    ModelParams scaled = dir;
    scaled.heads[0].U = scale(dir.heads[0].U, s);
    double r = empirical_risk(single, scaled);
    CHECK(r < prev);
    prev = r;
  }

  CHECK_THROWS_AS(empirical_risk(data, zeros_model(3, 3, 1)), DimError);
}

TEST_CASE("risk gradient: closed form at zero, FD match, self-boundedness") {
  Rng rng(43, 0);
  Dataset data = oracle::rand_dataset(rng, 3, 2, 6);

  // at theta = 0: dU_h = (1/sqrt(H)) l'(0) (1/n) sum_i y_i (1/T) 1 1^T X_i
  ModelParams g0 = risk_gradient(data, zeros_model(3, 2, 4));
  for (int h = 0; h < 4; ++h) {
    for (int t = 0; t < 3; ++t)
      for (int c = 0; c < 2; ++c) {
        double acc = 0;
        for (const auto& e : data.examples) {
          double mean = 0;
          for (int tp = 0; tp < 3; ++tp) mean += e.x.X(tp, c);
          acc += e.y * mean / 3;
        }
        acc *= -0.5 / (2.0 * data.n());  // l'(0) = -1/2, 1/sqrt(4) = 1/2
        CHECK(g0.heads[h].U(t, c) == doctest::Approx(acc).epsilon(1e-13));
      }
    for (double v : g0.heads[h].W.a) CHECK(v == 0.0);  // dW = 0 at U = 0
  }

  for (int rep = 0; rep < 10; ++rep) {
    int T = 2 + static_cast<int>(rng.below(3)), d = 2, H = 1 + static_cast<int>(rng.below(3));
    Dataset small = oracle::rand_dataset(rng, T, d, 4);
    ModelParams th = oracle::rand_model(rng, T, d, H);
    Vec analytic = flatten(risk_gradient(small, th));
    Vec fd = oracle::fd_gradient(
        [&](const Vec& v) { return empirical_risk(small, unflatten(v, T, d, H)); }, flatten(th));
    CHECK(oracle::rel_err(analytic, fd) <= 1e-6);
  }

  int violations = 0;
  for (int rep = 0; rep < 1000; ++rep) {
    int T = 2 + static_cast<int>(rng.below(3)), d = 2, H = 1 + static_cast<int>(rng.below(2));
    Dataset small = oracle::rand_dataset(rng, T, d, 3);
    ModelParams th = oracle::rand_model(rng, T, d, H);
    double risk = empirical_risk(small, th);
    double gn = norm2(flatten(risk_gradient(small, th)));
    LossBounds lb = loss_bounds(small.R, th);
    if (gn > lb.tight.beta1 * risk + 1e-12) ++violations;
    if (gn > lb.loose.beta1 * risk + 1e-12) ++violations;
  }
  CHECK(violations == 0);
}

TEST_CASE("risk hvp and dense Hessian agree, plus FD and structure checks") {
  Rng rng(44, 0);
  int T = 3, d = 2, H = 2, per = T * d + d * d, np = H * per;
  Dataset data = oracle::rand_dataset(rng, T, d, 4);
  ModelParams th = oracle::rand_model(rng, T, d, H);

  Matrix dense = risk_hessian_dense(data, th);
  REQUIRE(dense.rows == np);

  double fro = 0, asym = 0;
  for (int i = 0; i < np; ++i)
    for (int j = 0; j < np; ++j) {
      fro += dense(i, j) * dense(i, j);
      double dv = dense(i, j) - dense(j, i);
      asym += dv * dv;
    }
  CHECK(std::sqrt(asym) <= 1e-10 * (1 + std::sqrt(fro)));

  ModelParams v = oracle::rand_model(rng, T, d, H);
  Vec hv = flatten(risk_hvp(data, th, v));
  Vec expect = matvec(dense, flatten(v));
  CHECK(oracle::rel_err(hv, expect) <= 1e-10);

  // FD of the gradient along v
  const double h = 1e-5;
  Vec x0 = flatten(th), vf = flatten(v);
  Vec xp = x0, xm = x0;
  vaxpy(xp, h, vf);
  vaxpy(xm, -h, vf);
  Vec gp = flatten(risk_gradient(data, unflatten(xp, T, d, H)));
  Vec gm = flatten(risk_gradient(data, unflatten(xm, T, d, H)));
  Vec fd(np);
  for (int i = 0; i < np; ++i) fd[i] = (gp[i] - gm[i]) / (2 * h);
  CHECK(oracle::rel_err(hv, fd) <= 1e-4);

  // single sample, single head: UU block is l'' dU dU^T only
  std::vector<LabeledExample> one = {{data.examples[0].x, data.examples[0].y}};
  Dataset s1 = Dataset::from(std::move(one));
  ModelParams th1 = oracle::rand_model(rng, T, d, 1);
  Matrix d1 = risk_hessian_dense(s1, th1);
  double phi = forward_multi(s1.examples[0].x, th1);
  Logistic l = logistic(s1.examples[0].y * phi);
  std::vector<HeadGradient> g = grad_multi(s1.examples[0].x, th1);
  for (int i = 0; i < T * d; ++i)
    for (int j = 0; j < T * d; ++j)
      CHECK(d1(i, j) == doctest::Approx(l.d2 * g[0].dU.a[i] * g[0].dU.a[j]).epsilon(1e-12));

  CHECK_THROWS_AS(risk_hessian_dense(data, oracle::rand_model(rng, T, d, 250)), DimError);
}

TEST_CASE("loss bounds: exact substitutions, tight <= loose, R flag") {
  LossBounds lb = loss_bounds_raw(1.0, 4, 1, 1.0, 1.0, 1.0);
  CHECK(lb.loose.beta1 == doctest::Approx(6.0).epsilon(1e-15));
  CHECK(lb.loose.beta3 == doctest::Approx(16.0).epsilon(1e-15));
  CHECK(lb.loose.beta2 == doctest::Approx(25.0).epsilon(1e-15));
  CHECK(lb.loose.kappa == doctest::Approx(16.0).epsilon(1e-15));

  Rng rng(45, 0);
  ModelParams z = zeros_model(3, 2, 2);
  LossBounds lz = loss_bounds(2.0, z);
  CHECK(lz.loose.beta1 == doctest::Approx(std::sqrt(3.0) * 2.0).epsilon(1e-15));
  CHECK(lz.loose.beta3 ==
        doctest::Approx(2.0 * 2.0 * std::sqrt(6.0) * 8.0).epsilon(1e-15));
  CHECK(lz.r_ge_1);
  CHECK(!loss_bounds(0.5, z).r_ge_1);

  for (int rep = 0; rep < 50; ++rep) {
    ModelParams th = oracle::rand_model(rng, 3, 2, 3);
    LossBounds b = loss_bounds(1.5, th);
    CHECK(b.tight.beta1 <= b.loose.beta1 + 1e-15);
    CHECK(b.tight.beta2 <= b.loose.beta2 + 1e-15);
    CHECK(b.tight.beta3 <= b.loose.beta3 + 1e-15);
  }
}

TEST_CASE("curvature bounds hold on dense instances") {
  Rng rng(46, 0);
  int bad = 0;
  for (int rep = 0; rep < 200; ++rep) {
    int T = 2 + static_cast<int>(rng.below(2)), d = 2, H = 1 + static_cast<int>(rng.below(2));
    Dataset data = oracle::rand_dataset(rng, T, d, 3);
    ModelParams th = oracle::rand_model(rng, T, d, H);
    double risk = empirical_risk(data, th);
    LossBounds lb = loss_bounds(data.R, th);
    Matrix dense = risk_hessian_dense(data, th);
    EigExtremes ee = sym_eig_extremes(dense);
    double spec = std::max(std::fabs(ee.lambda_min), std::fabs(ee.lambda_max));
    if (spec > lb.tight.beta2 + 1e-10) ++bad;
    if (ee.lambda_min < -(lb.tight.beta3 / std::sqrt(static_cast<double>(H))) * risk - 1e-10)
      ++bad;
  }
  CHECK(bad == 0);
}

TEST_CASE("rho: substitutions and monotonicity") {
  CHECK(alpha_of(1.0, 1, 1, 0.0, 0.0) == doctest::Approx(6.0).epsilon(1e-15));
  CHECK(rho_of(1.0, 1, 1, 1.0, 0.0, 0.0) == doctest::Approx(81.0).epsilon(1e-15));

  double r1 = rho_of(1.5, 4, 3, 8.0, 1.0, 0.5);
  double r2 = rho_of(1.5, 4, 3, 8.0, 2.0, 0.5);
  double r3 = rho_of(1.5, 4, 3, 8.0, 1.0, 1.0);
  CHECK(r2 > r1);
  CHECK(r3 > r1);

  Rng rng(47, 0);
  ModelParams th0 = oracle::rand_model(rng, 3, 2, 2);
  ModelParams th = th0;
  axpy(th.heads[0].U, 0.5, Matrix(3, 2, 0.1));
  double rho_val = rho(th, th0, 1.5);
  Vec diff = flatten(th);
  Vec base = flatten(th0);
  for (size_t i = 0; i < diff.size(); ++i) diff[i] -= base[i];
  CHECK(rho_val == doctest::Approx(rho_of(1.5, 3, 2, 2.0, norm2(diff),
                                          param_norms(th).max_per_head))
                       .epsilon(1e-12));
}

TEST_CASE("glqc: degenerate segment, convex direction, certified random pairs") {
  Rng rng(48, 0);
  Dataset data = oracle::rand_dataset(rng, 3, 2, 4);

  ModelParams th = oracle::rand_model(rng, 3, 2, 2);
  GlqcResult same = glqc_check(data, th, th, 11);
  CHECK(same.ratio == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(same.conclusion_holds);

  // W = 0, vary U only: the risk is convex along the segment
  ModelParams u1 = zeros_model(3, 2, 1), u2 = zeros_model(3, 2, 1);
  for (double& v : u1.heads[0].U.a) v = rng.uniform(-1, 1);
  for (double& v : u2.heads[0].U.a) v = rng.uniform(-1, 1);
  GlqcResult cvx = glqc_check(data, u1, u2, 101);
  CHECK(cvx.segment_max <= cvx.endpoint_max + 1e-12);

  // small perturbations with H = 64 heads satisfy the condition and conclusion
  for (int rep = 0; rep < 5; ++rep) {
    ModelParams a = oracle::rand_model(rng, 3, 2, 64, 0.3);
    ModelParams b = a;
    for (auto& h : b.heads) {
      for (double& v : h.U.a) v += rng.uniform(-0.01, 0.01);
      for (double& v : h.W.a) v += rng.uniform(-0.01, 0.01);
    }
    GlqcResult g = glqc_check(data, a, b, 51);
    CHECK(g.condition_holds);
    CHECK(g.conclusion_holds);
  }

  CHECK_THROWS_AS(glqc_check(data, th, th, 2), DimError);
}

TEST_CASE("deterministic parallel reduction and loss report") {
  Rng rng(49, 0);
  Dataset data = oracle::rand_dataset(rng, 4, 3, 97);  // not a multiple of the chunk size
  ModelParams th = oracle::rand_model(rng, 4, 3, 3);

  double r1 = empirical_risk(data, th, 1);
  double r4 = empirical_risk(data, th, 4);
  CHECK(r1 == r4);
  Vec g1 = flatten(risk_gradient(data, th, 1));
  Vec g4 = flatten(risk_gradient(data, th, 4));
  for (size_t i = 0; i < g1.size(); ++i) CHECK(g1[i] == g4[i]);

  LossReport rep = loss_report(data, th, zeros_model(4, 3, 3));
  CHECK(rep.value == doctest::Approx(r1).epsilon(1e-15));
  CHECK(rep.grad_norm == doctest::Approx(norm2(g1)).epsilon(1e-15));
  CHECK(rep.beta1 > 0);
  CHECK(rep.rho > 0);

  std::string header = loss_report_csv_header();
  std::string row = loss_report_csv_row(rep);
  size_t hc = std::count(header.begin(), header.end(), ',');
  size_t rc = std::count(row.begin(), row.end(), ',');
  CHECK(hc == rc);
}
