#include "mha/datagen.hpp"

#include <algorithm>
#include <cmath>

namespace mha {

namespace {
int round_half_up(double x) { return static_cast<int>(std::floor(x + 0.5)); }
}  // namespace

void MixtureSpec::validate() const {
  if (d < M + 2) throw ConfigError("MixtureSpec: d >= M+2 required for orthogonal patterns");
  if (M < 1) throw ConfigError("MixtureSpec: M >= 1 required");
  if (T < 2) throw ConfigError("MixtureSpec: T >= 2 required");
  if (!(S > 0)) throw ConfigError("MixtureSpec: S > 0 required");
  if (sigma < 0) throw ConfigError("MixtureSpec: sigma >= 0 required");
  if (!(zeta > 0) || zeta > 1) throw ConfigError("MixtureSpec: zeta in (0,1] required");
  int k = n_relevant();
  int hi = allow_degenerate ? T : T - 1;
  if (k < 1 || k > hi) throw ConfigError("MixtureSpec: 1 <= round(zeta T) <= T-1 required");
  if (!fixed_mask.empty()) {
    if (static_cast<int>(fixed_mask.size()) != k)
      throw ConfigError("MixtureSpec: fixed_mask must have round(zeta T) entries");
    for (int t : fixed_mask)
      if (t < 0 || t >= T) throw ConfigError("MixtureSpec: fixed_mask index out of range");
  }
  if (enforce_bounds && (Z_mu_cap < 0 || Z_nu_cap < 0 || Z_cap < 0))
    throw ConfigError("MixtureSpec: noise caps must be >= 0");
}

int MixtureSpec::n_relevant() const { return round_half_up(zeta * T); }

Vec MixtureSpec::mu_plus() const {
  Vec v(d, 0.0);
  v[0] = S;
  return v;
}

Vec MixtureSpec::mu_minus() const {
  Vec v(d, 0.0);
  v[1] = S;
  return v;
}

Vec MixtureSpec::nu(int l) const {
  if (l < 1 || l > M) throw DimError("MixtureSpec::nu: l out of range");
  Vec v(d, 0.0);
  v[1 + l] = S;
  return v;
}

Dm1Result dm1_sample(const MixtureSpec& spec, int n) {
  spec.validate();
  if (n < 1) throw DimError("dm1_sample: n >= 1 required");
  int T = spec.T, d = spec.d, M = spec.M, k = spec.n_relevant();
  Vec mup = spec.mu_plus(), mum = spec.mu_minus();
  std::vector<Vec> nus;
  for (int l = 1; l <= M; ++l) nus.push_back(spec.nu(l));

  std::vector<LabeledExample> examples;
  examples.reserve(n);
  std::vector<RelevantMask> masks(n);
  double zmu = 0, znu_single = 0, zmax = 0;

  for (int i = 0; i < n; ++i) {
    Rng rng(spec.seed, static_cast<std::uint64_t>(i));
    int y = rng.sign();
    // relevant set: partial Fisher-Yates over [0, T)
    std::vector<int> rel;
    if (!spec.fixed_mask.empty()) {
      rel = spec.fixed_mask;
    } else {
      std::vector<int> idx(T);
      for (int t = 0; t < T; ++t) idx[t] = t;
      for (int j = 0; j < k; ++j) {
        int pick = j + static_cast<int>(rng.below(static_cast<std::uint64_t>(T - j)));
        std::swap(idx[j], idx[pick]);
      }
      rel.assign(idx.begin(), idx.begin() + k);
    }
    std::sort(rel.begin(), rel.end());
    masks[i].rel = rel;
    std::vector<bool> is_rel(T, false);
    for (int t : rel) is_rel[t] = true;

    const Vec& mu = (y == 1) ? mup : mum;
    Matrix X(T, d);
    for (int t = 0; t < T; ++t) {
      if (is_rel[t]) {
        for (int c = 0; c < d; ++c) X(t, c) = mu[c];
        continue;
      }
      int j = static_cast<int>(rng.below(static_cast<std::uint64_t>(M)));
      Vec z(d, 0.0);
      for (int tries = 0;; ++tries) {
        if (tries >= 100000)
          throw NumericError("dm1_sample: enforce_bounds caps too tight for sigma");
        for (int c = 0; c < d; ++c) z[c] = spec.sigma * rng.normal();
        if (!spec.enforce_bounds || spec.sigma == 0) break;
        bool ok = std::abs(dot(z, mup)) <= spec.Z_mu_cap &&
                  std::abs(dot(z, mum)) <= spec.Z_mu_cap && norm2(z) <= spec.Z_cap;
        for (int l = 0; ok && l < M; ++l)
          ok = std::abs(dot(z, nus[l])) <= spec.Z_nu_cap / M;
        if (ok) break;
      }
      zmu = std::max({zmu, std::abs(dot(z, mup)), std::abs(dot(z, mum))});
      for (int l = 0; l < M; ++l) znu_single = std::max(znu_single, std::abs(dot(z, nus[l])));
      zmax = std::max(zmax, norm2(z));
      for (int c = 0; c < d; ++c) X(t, c) = nus[j][c] + z[c];
    }
    examples.push_back({TokenMatrix(std::move(X)), y});
  }

  Dm1Result out{Dataset::from(std::move(examples)), std::move(masks), {}};
  if (spec.enforce_bounds) {
    out.bounds.Z_mu = spec.Z_mu_cap;
    out.bounds.Z_nu = spec.Z_nu_cap;
    out.bounds.Z = spec.Z_cap;
  } else {
    out.bounds.Z_mu = zmu;
    out.bounds.Z_nu = M * znu_single;
    out.bounds.Z = zmax;
  }
  out.bounds.R =
      std::sqrt(spec.S * spec.S + out.bounds.Z * out.bounds.Z + 2.0 * out.bounds.Z_nu / M);
  return out;
}

void PlantedSpec::validate() const {
  if (d < 1 || T < 1) throw ConfigError("PlantedSpec: d, T >= 1 required");
  if (margin_floor < 0) throw ConfigError("PlantedSpec: margin_floor >= 0 required");
  if (W_star.rows != d || W_star.cols != d) throw ConfigError("PlantedSpec: W_star must be d x d");
  if (U_star.rows != T || U_star.cols != d) throw ConfigError("PlantedSpec: U_star must be T x d");
}

Dataset dm2_sample(const PlantedSpec& spec, int n) {
  spec.validate();
  if (n < 1) throw DimError("dm2_sample: n >= 1 required");
  std::vector<LabeledExample> examples;
  examples.reserve(n);
  long attempts = 0, accepted = 0;
  for (int i = 0; i < n; ++i) {
    Rng rng(spec.seed, static_cast<std::uint64_t>(i));
    for (;;) {
      ++attempts;
      Matrix X(spec.T, spec.d);
      for (double& v : X.a) v = rng.normal();
      TokenMatrix x(std::move(X));
      double logit = forward_single(x, HeadParams{spec.U_star, spec.W_star});
      if (std::abs(logit) > spec.margin_floor) {
        ++accepted;
        examples.push_back({std::move(x), logit > 0 ? 1 : -1});
        break;
      }
      if (attempts >= 1000 && accepted * 100 < attempts)
        throw ConfigError("dm2_sample: rejection rate > 99%; margin_floor too large");
    }
  }
  return Dataset::from(std::move(examples));
}

double gamma_lin(const MixtureSpec& spec, const NoiseBounds& bounds) {
  double S = spec.S;
  return (S * std::sqrt(static_cast<double>(spec.T)) / std::sqrt(2.0)) *
         (spec.zeta - 2.0 * (1.0 - spec.zeta) * bounds.Z_mu / (S * S));
}

double gamma_lin_empirical(const Dataset& data, const MixtureSpec& spec) {
  if (data.d != spec.d || data.T != spec.T) throw DimError("gamma_lin_empirical: shape mismatch");
  Vec ustar = spec.mu_plus();
  Vec mum = spec.mu_minus();
  for (int c = 0; c < spec.d; ++c) ustar[c] -= mum[c];
  double scale = 1.0 / (spec.S * std::sqrt(2.0 * spec.T));
  double best = 0;
  bool first = true;
  for (const auto& e : data.examples) {
    double s = 0;
    for (int t = 0; t < spec.T; ++t)
      for (int c = 0; c < spec.d; ++c) s += e.x.X(t, c) * ustar[c];
    double m = e.y * scale * s;
    if (first || m < best) best = m, first = false;
  }
  return best;
}

}  // namespace mha
