#pragma once

#include "mha/io.hpp"
#include "mha/stability.hpp"

namespace mha {

// experiment config, parsed from JSON:
// {
//   "data": {"type":"mixture"|"planted", ..., "n_train":.., "n_test":..},
//   "model": {"H":[1,4,16]},            // optional "T","d" must match data
//   "train": {"optimizer":"gd"|"momentum"|"adam",
//             "eta_rule":"explicit"|"sqrt_h", "eta":.., "K":..,
//             "momentum":.., "adam_b1":.., "adam_b2":.., "adam_eps":..,
//             "record_every":..},
//   "trials": 5,
//   "outputs": "dir"                    // optional, --out overrides
// }
// unknown keys are rejected at every level, naming the offending field
struct DataConfig {
  std::string type;  // "mixture" | "planted"
  MixtureSpec mixture;
  PlantedSpec planted;
  double teacher_scale_U = 1.0, teacher_scale_W = 1.0;  // planted teacher
  int n_train = 100, n_test = 300;

  void validate() const;
  int T() const { return type == "mixture" ? mixture.T : planted.T; }
  int d() const { return type == "mixture" ? mixture.d : planted.d; }
};

struct ModelConfig {
  std::vector<int> H;
};

struct ExperimentConfig {
  DataConfig data;
  ModelConfig model;
  TrainConfig train;
  int trials = 1;
  std::string outputs;

  void validate() const;
};

ExperimentConfig parse_config(const std::string& json_text);

// teacher for the planted model: U* = 1_T (s_U e1)^T, W* = s_W e2 e1^T
PlantedSpec default_planted_teacher(int d, int T, double scale_U, double scale_W,
                                    double margin_floor, std::uint64_t seed);

// built-in presets: context-gd, context-gd-sqrtH, context-adam,
// planted-gd, planted-momentum, planted-adam
ExperimentConfig figure_config(const std::string& figure);

struct RunResult {
  int H = 0;
  int trial = 0;
  TrainTrace trace;
};

struct ExperimentResult {
  std::vector<RunResult> runs;
};

// trains every (H, trial) pair from theta0 = 0; trial i draws its data with
// seed+i (train and test split from one stream). Writes per-trial CSVs, one
// aggregate CSV per H, and one SVG per metric into outdir ("" skips writing).
ExperimentResult run_experiment(const ExperimentConfig& cfg, std::uint64_t seed,
                                const std::string& outdir, int threads = 1);

ExperimentResult reproduce(const std::string& figure, std::uint64_t seed,
                           const std::string& outdir, int threads = 1);

// first recorded iteration with train_loss <= threshold; last recorded
// iteration if the threshold is never reached
int iterations_to_loss(const TrainTrace& trace, double threshold);

// max relative error of the analytic gradients (model and risk) against
// central finite differences on a few small random instances
double gradcheck_max_rel_err(std::uint64_t seed = 0);

std::string stability_csv(const std::vector<StabilityReport>& rows);

}  // namespace mha
