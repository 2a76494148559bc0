#pragma once

#include <cstdint>

#include "mha/objective.hpp"

namespace mha {

// Tokenized-mixture model DM1: relevant tokens carry the class pattern mu_y,
// irrelevant tokens are a nuisance pattern nu_j plus Gaussian noise.
struct MixtureSpec {
  int d = 4, T = 10, M = 2;
  double S = 2.0;
  double zeta = 0.1;
  double sigma = 0.1;
  bool enforce_bounds = false;
  // a-priori caps used only when enforce_bounds is set:
  // |<z,mu>| <= Z_mu_cap, |<z,nu_l>| <= Z_nu_cap/M, ||z|| <= Z_cap
  double Z_mu_cap = 0, Z_nu_cap = 0, Z_cap = 0;
  std::uint64_t seed = 0;
  bool allow_degenerate = false;    // permit round(zeta T) == T
  std::vector<int> fixed_mask;      // nonempty: use this relevant set for all examples

  void validate() const;
  int n_relevant() const;  // round-half-up of zeta*T
  Vec mu_plus() const;
  Vec mu_minus() const;
  Vec nu(int l) const;  // l in [1, M]
};

struct NoiseBounds {
  double Z_mu = 0, Z_nu = 0, Z = 0;
  double R = 0;  // sqrt(S^2 + Z^2 + 2 Z_nu / M)
};

struct RelevantMask {
  std::vector<int> rel;  // sorted indices, size round(zeta*T)
};

struct Dm1Result {
  Dataset data;
  std::vector<RelevantMask> masks;
  NoiseBounds bounds;
};

Dm1Result dm1_sample(const MixtureSpec& spec, int n);

// Planted single-head attention model DM2.
struct PlantedSpec {
  int d = 5, T = 10;
  Matrix W_star, U_star;
  double margin_floor = 0.2;
  std::uint64_t seed = 0;

  void validate() const;
};

Dataset dm2_sample(const PlantedSpec& spec, int n);

// gamma_lin = (S sqrt(T)/sqrt(2)) (zeta - 2(1-zeta) Z_mu / S^2)
double gamma_lin(const MixtureSpec& spec, const NoiseBounds& bounds);
// min over the dataset of y <U_lin, sum_t x_t>, U_lin = 1 u*^T / (S sqrt(2T))
double gamma_lin_empirical(const Dataset& data, const MixtureSpec& spec);

}  // namespace mha
