#pragma once

#include "mha/ntk.hpp"

namespace mha {

// Heads with identical parameters stay identical under GD, heavy-ball, and
// Adam (their gradients and moment buffers coincide), so a model whose heads
// take only a few distinct values is stored as one representative per group
// with a multiplicity. This makes theorem-scale head counts (H ~ 1e18)
// trainable exactly. Unit groups (every count 1) reproduce a plain multi-head
// model bit for bit.
struct GroupedParams {
  std::vector<HeadParams> psi;  // one representative per group
  std::vector<double> count;    // multiplicity per group; sum = H
  double H = 0;

  int G() const { return static_cast<int>(psi.size()); }
  int T() const { return psi.empty() ? 0 : psi[0].U.rows; }
  int d() const { return psi.empty() ? 0 : psi[0].U.cols; }
  void check() const;
};

GroupedParams grouped_from_model(const ModelParams& th);  // unit groups, bitwise faithful
ModelParams model_from_grouped(const GroupedParams& g);   // integral counts, H <= 100000
GroupedParams grouped_zeros(int T, int d, double H);      // one group of H zero heads

double grouped_forward(const TokenMatrix& x, const GroupedParams& g);
// skip >= 0 leaves sample `skip` out while keeping the 1/n normalization
double grouped_risk(const Dataset& data, const GroupedParams& g, int threads = 1, int skip = -1);
// risk gradient with respect to ONE physical head per group (not count-scaled)
std::vector<HeadGradient> grouped_risk_grad(const Dataset& data, const GroupedParams& g,
                                            int threads = 1, int skip = -1);

double grouped_norm(const GroupedParams& g);     // ||theta~|| = sqrt(sum_g count ||psi_g||^2)
double grouped_dist(const GroupedParams& a, const GroupedParams& b);  // same group structure
double grouped_maxnorm(const GroupedParams& g);  // ||theta~||_{2,inf} = max_g ||psi_g||
double grouped_max_U_F(const GroupedParams& g);
double grad_norm_of(const GroupedParams& g, const std::vector<HeadGradient>& grads);
LossBounds grouped_loss_bounds(double R, const GroupedParams& g);

enum class Optimizer { kGd, kGdMomentum, kAdam };
enum class EtaRule { kExplicit, kAutoTheorem, kSqrtHScaled };

struct TrainConfig {
  Optimizer optimizer = Optimizer::kGd;
  EtaRule eta_rule = EtaRule::kExplicit;
  double eta = 1.0;  // explicit step-size, or the base for sqrtH_scaled
  int K = 100;
  double momentum = 0.9;
  double adam_b1 = 0.9, adam_b2 = 0.999, adam_eps = 1e-8;
  std::uint64_t seed = 0;
  int record_every = 1;
  int threads = 1;
  double divergence_guard = 1e6;

  void validate() const;
};

struct TraceRow {
  int k = 0;
  // metrics without available context are NaN, never zero-filled
  double train_loss = 0, test_loss = 0, min_margin = 0, grad_norm = 0, dist_to_init = 0,
         avg_W_norm = 0, avg_U_norm = 0, attn_rel_mass = 0, align_W = 0, align_U = 0;
};

struct TrainTrace {
  std::vector<TraceRow> rows;
  bool diverged = false;
  double eta_used = 0;
};

std::string trace_csv_header();
std::string trace_csv_row(const TraceRow& r);

struct MetricContext {
  const Dataset* test = nullptr;
  const std::vector<RelevantMask>* masks = nullptr;  // masks of the train set
  const Matrix* W_planted = nullptr;
  const Matrix* U_planted = nullptr;
};

TraceRow trace_metrics(int k, const Dataset& data, const GroupedParams& g,
                       const GroupedParams& g0, const MetricContext& ctx, double train_loss,
                       double grad_norm, int threads = 1);

// theorem rule: eta = 1 ^ 1/rho(target) ^ D^2/(K Lhat(target)) ^ D^2/Lhat(init)
double theorem_eta(const Dataset& data, const GroupedParams& target, const GroupedParams& init,
                   int K, int threads = 1);
double sqrtH_eta(double base, double H);

// theta' = theta - eta grad Lhat(theta)
ModelParams gd_step(const Dataset& data, const ModelParams& th, double eta, int threads = 1);

TrainTrace train_grouped(const Dataset& data, const GroupedParams& g0, const TrainConfig& cfg,
                         const MetricContext& ctx = {}, GroupedParams* out_final = nullptr,
                         const GroupedParams* eta_target = nullptr);
TrainTrace train(const Dataset& data, const ModelParams& th0, const TrainConfig& cfg,
                 const MetricContext& ctx = {}, ModelParams* out_final = nullptr,
                 const ModelParams* eta_target = nullptr);

struct PhaseOneResult {
  ModelParams theta1;
  GroupedParams theta1_grouped;  // two groups: alpha = +1 and alpha = -1
  std::vector<int> alpha;        // per-head signs drawn IID from the seed
  Vec p;                         // common U row minus (zeta/4) u*, per head sign removed
  double P_empirical = 0;        // ||p||
};

// theta^(1)_h = -alpha_h sqrt(H) grad_h Lhat(0); closed form, W^(1) = 0 exactly
PhaseOneResult phase_one(const Dataset& data, int H, std::uint64_t seed, const MixtureSpec& spec,
                         const ModelParams* th0 = nullptr);

struct DescentStep {
  int k = 0;
  double loss = 0, next_loss = 0, grad_sq = 0, rho_k = 0;
  bool applicable = false;    // eta <= 1/rho_k
  bool raw_violated = false;  // Lhat(k+1) > Lhat(k) - (eta/2)||grad||^2, any eta
  bool violated = false;      // raw violation on an applicable step
};

struct DescentReport {
  std::vector<DescentStep> steps;
  int applicable = 0, violations = 0, raw_violations = 0;
  double eta = 0;
};

// re-runs GD from g0 and checks the descent lemma at every step
DescentReport verify_descent(const Dataset& data, const GroupedParams& g0, double eta, int K,
                             int threads = 1);

struct TheoremReport {
  bool certified = false;  // H and eta preconditions verified
  bool h_ok = false, eta_ok = false;
  double H_required = 0, eta_max = 0, eta = 0;
  double D = 0, m = 0;  // ||target - init||, ||target||_{2,inf}
  double target_loss = 0, init_loss = 0;
  double worst_avg_slack = 0;   // min over horizons of 2L(target)+5D^2/(4 eta k) - avg loss
  double final_dist_slack = 0;  // 4D - ||theta_K - theta_0||
  double worst_iter_slack = 0;  // min over k of 3D - ||theta_k - target||
  bool avg_ok = false, final_dist_ok = false, iter_ok = false;
};

// inequalities evaluated at every iteration whether or not certified
TheoremReport verify_theorem_bounds(const Dataset& data, const GroupedParams& target,
                                    const GroupedParams& g0, int K, double eta, int threads = 1);

}  // namespace mha
