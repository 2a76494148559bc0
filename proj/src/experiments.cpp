#include "mha/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include <json.hpp>

namespace mha {

using nlohmann::json;

namespace {

void reject_unknown(const json& j, const char* where, std::initializer_list<const char*> keys) {
  for (const auto& [k, v] : j.items()) {
    (void)v;
    if (std::find_if(keys.begin(), keys.end(),
                     [&](const char* s) { return k == s; }) == keys.end())
      throw ConfigError(std::string(where) + ": unknown key '" + k + "'");
  }
}

double num_at(const json& j, const char* where, const char* key, double fallback,
              bool required = false) {
  if (!j.contains(key)) {
    if (required) throw ConfigError(std::string(where) + "." + key + ": required");
    return fallback;
  }
  if (!j[key].is_number()) throw ConfigError(std::string(where) + "." + key + ": number expected");
  return j[key].get<double>();
}

int int_at(const json& j, const char* where, const char* key, int fallback,
           bool required = false) {
  double v = num_at(j, where, key, fallback, required);
  if (v != std::floor(v)) throw ConfigError(std::string(where) + "." + key + ": integer expected");
  return static_cast<int>(v);
}

}  // namespace

void DataConfig::validate() const {
  if (type == "mixture")
    mixture.validate();
  else if (type == "planted")
    planted.validate();
  else
    throw ConfigError("data.type: 'mixture' or 'planted' expected");
  if (n_train < 1) throw ConfigError("data.n_train: must be >= 1");
  if (n_test < 0) throw ConfigError("data.n_test: must be >= 0");
}

void ExperimentConfig::validate() const {
  data.validate();
  if (model.H.empty()) throw ConfigError("model.H: non-empty list required");
  for (int h : model.H)
    if (h < 1) throw ConfigError("model.H: entries must be >= 1");
  train.validate();
  if (train.eta_rule == EtaRule::kAutoTheorem)
    throw ConfigError("train.eta_rule: auto_theorem needs a target and is not an experiment rule");
  if (trials < 1) throw ConfigError("trials: must be >= 1");
}

PlantedSpec default_planted_teacher(int d, int T, double scale_U, double scale_W,
                                    double margin_floor, std::uint64_t seed) {
  if (d < 2) throw ConfigError("planted teacher needs d >= 2");
  PlantedSpec spec;
  spec.d = d;
  spec.T = T;
  spec.margin_floor = margin_floor;
  spec.seed = seed;
  spec.U_star = Matrix(T, d);
  for (int t = 0; t < T; ++t) spec.U_star(t, 0) = scale_U;
  spec.W_star = Matrix(d, d);
  spec.W_star(1, 0) = scale_W;
  return spec;
}

ExperimentConfig parse_config(const std::string& text) {
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded()) throw ConfigError("config: JSON parse error");
  if (!j.is_object()) throw ConfigError("config: object expected");
  reject_unknown(j, "config", {"data", "model", "train", "trials", "outputs"});

  ExperimentConfig cfg;
  if (!j.contains("data") || !j["data"].is_object())
    throw ConfigError("config.data: object required");
  const json& jd = j["data"];
  if (!jd.contains("type") || !jd["type"].is_string())
    throw ConfigError("data.type: string required");
  cfg.data.type = jd["type"].get<std::string>();
  if (cfg.data.type == "mixture") {
    reject_unknown(jd, "data",
                   {"type", "d", "T", "M", "S", "zeta", "sigma", "enforce_bounds", "Z_mu_cap",
                    "Z_nu_cap", "Z_cap", "n_train", "n_test"});
    MixtureSpec& m = cfg.data.mixture;
    m.d = int_at(jd, "data", "d", m.d);
    m.T = int_at(jd, "data", "T", m.T);
    m.M = int_at(jd, "data", "M", m.M);
    m.S = num_at(jd, "data", "S", m.S);
    m.zeta = num_at(jd, "data", "zeta", m.zeta);
    m.sigma = num_at(jd, "data", "sigma", m.sigma);
    if (jd.contains("enforce_bounds")) {
      if (!jd["enforce_bounds"].is_boolean())
        throw ConfigError("data.enforce_bounds: boolean expected");
      m.enforce_bounds = jd["enforce_bounds"].get<bool>();
    }
    m.Z_mu_cap = num_at(jd, "data", "Z_mu_cap", m.Z_mu_cap);
    m.Z_nu_cap = num_at(jd, "data", "Z_nu_cap", m.Z_nu_cap);
    m.Z_cap = num_at(jd, "data", "Z_cap", m.Z_cap);
  } else if (cfg.data.type == "planted") {
    reject_unknown(jd, "data",
                   {"type", "d", "T", "margin_floor", "teacher_scale_U", "teacher_scale_W",
                    "n_train", "n_test"});
    int d = int_at(jd, "data", "d", 5);
    int T = int_at(jd, "data", "T", 10);
    cfg.data.teacher_scale_U = num_at(jd, "data", "teacher_scale_U", 1.0);
    cfg.data.teacher_scale_W = num_at(jd, "data", "teacher_scale_W", 1.0);
    double floor = num_at(jd, "data", "margin_floor", 0.2);
    cfg.data.planted = default_planted_teacher(d, T, cfg.data.teacher_scale_U,
                                               cfg.data.teacher_scale_W, floor, 0);
  } else {
    throw ConfigError("data.type: 'mixture' or 'planted' expected");
  }
  cfg.data.n_train = int_at(jd, "data", "n_train", cfg.data.n_train);
  cfg.data.n_test = int_at(jd, "data", "n_test", cfg.data.n_test);

  if (!j.contains("model") || !j["model"].is_object())
    throw ConfigError("config.model: object required");
  const json& jm = j["model"];
  reject_unknown(jm, "model", {"H", "T", "d"});
  if (!jm.contains("H") || !jm["H"].is_array())
    throw ConfigError("model.H: list required");
  for (const auto& h : jm["H"]) {
    if (!h.is_number_integer()) throw ConfigError("model.H: integer entries expected");
    cfg.model.H.push_back(h.get<int>());
  }
  if (jm.contains("T") && int_at(jm, "model", "T", 0) != cfg.data.T())
    throw ConfigError("model.T: disagrees with data");
  if (jm.contains("d") && int_at(jm, "model", "d", 0) != cfg.data.d())
    throw ConfigError("model.d: disagrees with data");

  if (j.contains("train")) {
    if (!j["train"].is_object()) throw ConfigError("config.train: object expected");
    const json& jt = j["train"];
    reject_unknown(jt, "train",
                   {"optimizer", "eta_rule", "eta", "K", "momentum", "adam_b1", "adam_b2",
                    "adam_eps", "record_every"});
    TrainConfig& t = cfg.train;
    if (jt.contains("optimizer")) {
      std::string o = jt["optimizer"].is_string() ? jt["optimizer"].get<std::string>() : "";
      if (o == "gd")
        t.optimizer = Optimizer::kGd;
      else if (o == "momentum")
        t.optimizer = Optimizer::kGdMomentum;
      else if (o == "adam")
        t.optimizer = Optimizer::kAdam;
      else
        throw ConfigError("train.optimizer: 'gd', 'momentum' or 'adam' expected");
    }
    if (jt.contains("eta_rule")) {
      std::string r = jt["eta_rule"].is_string() ? jt["eta_rule"].get<std::string>() : "";
      if (r == "explicit")
        t.eta_rule = EtaRule::kExplicit;
      else if (r == "sqrt_h")
        t.eta_rule = EtaRule::kSqrtHScaled;
      else
        throw ConfigError("train.eta_rule: 'explicit' or 'sqrt_h' expected");
    }
    t.eta = num_at(jt, "train", "eta", t.eta);
    t.K = int_at(jt, "train", "K", t.K);
    t.momentum = num_at(jt, "train", "momentum", t.momentum);
    t.adam_b1 = num_at(jt, "train", "adam_b1", t.adam_b1);
    t.adam_b2 = num_at(jt, "train", "adam_b2", t.adam_b2);
    t.adam_eps = num_at(jt, "train", "adam_eps", t.adam_eps);
    t.record_every = int_at(jt, "train", "record_every", t.record_every);
  }

  cfg.trials = int_at(j, "config", "trials", cfg.trials);
  if (j.contains("outputs")) {
    if (!j["outputs"].is_string()) throw ConfigError("config.outputs: string expected");
    cfg.outputs = j["outputs"].get<std::string>();
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig figure_config(const std::string& figure) {
  ExperimentConfig cfg;
  cfg.model.H = {1, 4, 16};
  cfg.trials = 5;
  cfg.train.optimizer = Optimizer::kGd;
  cfg.train.eta_rule = EtaRule::kExplicit;
  bool context = figure.rfind("context-", 0) == 0;
  if (context) {
    cfg.data.type = "mixture";
    cfg.data.mixture = MixtureSpec{};  // d=4, T=10, M=2, S=2, zeta=0.1, sigma=0.1
    cfg.data.n_train = 100;
    cfg.data.n_test = 300;
  } else {
    cfg.data.type = "planted";
    cfg.data.planted = default_planted_teacher(5, 10, 1.0, 1.0, 0.2, 0);
    cfg.data.n_train = 1000;
    cfg.data.n_test = 3000;
  }
  if (figure == "context-gd") {
    cfg.train.eta = 1.0;
    cfg.train.K = 600;
    cfg.train.record_every = 2;
  } else if (figure == "context-gd-sqrtH") {
    cfg.train.eta_rule = EtaRule::kSqrtHScaled;
    cfg.train.eta = 1.0;
    cfg.train.K = 600;
    cfg.train.record_every = 2;
  } else if (figure == "context-adam") {
    cfg.train.optimizer = Optimizer::kAdam;
    cfg.train.eta = 0.06;
    cfg.train.K = 300;
    cfg.train.record_every = 2;
  } else if (figure == "planted-gd") {
    cfg.train.eta_rule = EtaRule::kSqrtHScaled;
    cfg.train.eta = 0.05;
    cfg.train.K = 300;
    cfg.train.record_every = 5;
  } else if (figure == "planted-momentum") {
    cfg.train.optimizer = Optimizer::kGdMomentum;
    cfg.train.momentum = 0.9;
    cfg.train.eta_rule = EtaRule::kSqrtHScaled;
    cfg.train.eta = 0.005;
    cfg.train.K = 300;
    cfg.train.record_every = 5;
  } else if (figure == "planted-adam") {
    cfg.train.optimizer = Optimizer::kAdam;
    cfg.train.eta = 0.06;
    cfg.train.K = 300;
    cfg.train.record_every = 5;
  } else {
    throw ConfigError("figure: unknown name '" + figure + "'");
  }
  cfg.validate();
  return cfg;
}

namespace {

struct TrialData {
  Dataset train, test;
  std::vector<RelevantMask> masks;  // train masks (mixture only)
  TargetParams targets;             // mixture alignment targets
  bool mixture = false;
};

TrialData make_trial_data(const DataConfig& dc, std::uint64_t trial_seed) {
  TrialData td;
  int total = dc.n_train + dc.n_test;
  if (dc.type == "mixture") {
    td.mixture = true;
    MixtureSpec spec = dc.mixture;
    spec.seed = trial_seed;
    Dm1Result r = dm1_sample(spec, total);
    std::vector<LabeledExample> tr(r.data.examples.begin(), r.data.examples.begin() + dc.n_train);
    std::vector<LabeledExample> te(r.data.examples.begin() + dc.n_train, r.data.examples.end());
    td.train = Dataset::from(std::move(tr));
    td.test = dc.n_test > 0 ? Dataset::from(std::move(te)) : Dataset{};
    td.masks.assign(r.masks.begin(), r.masks.begin() + dc.n_train);
    td.targets = make_targets(spec);
  } else {
    PlantedSpec spec = dc.planted;
    spec.seed = trial_seed;
    Dataset all = dm2_sample(spec, total);
    std::vector<LabeledExample> tr(all.examples.begin(), all.examples.begin() + dc.n_train);
    std::vector<LabeledExample> te(all.examples.begin() + dc.n_train, all.examples.end());
    td.train = Dataset::from(std::move(tr));
    td.test = dc.n_test > 0 ? Dataset::from(std::move(te)) : Dataset{};
  }
  return td;
}

const char* kMetricNames[] = {"train_loss",   "test_loss",  "min_margin",    "grad_norm",
                              "dist_to_init", "avg_W_norm", "avg_U_norm",    "attn_rel_mass",
                              "align_W",      "align_U"};

double metric_field(const TraceRow& r, int idx) {
  switch (idx) {
    case 0: return r.train_loss;
    case 1: return r.test_loss;
    case 2: return r.min_margin;
    case 3: return r.grad_norm;
    case 4: return r.dist_to_init;
    case 5: return r.avg_W_norm;
    case 6: return r.avg_U_norm;
    case 7: return r.attn_rel_mass;
    case 8: return r.align_W;
    default: return r.align_U;
  }
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& cfg, std::uint64_t seed,
                                const std::string& outdir, int threads) {
  cfg.validate();
  ExperimentResult result;
  if (!outdir.empty()) ensure_dir(outdir);

  std::vector<TrialData> data;
  data.reserve(cfg.trials);
  for (int t = 0; t < cfg.trials; ++t) data.push_back(make_trial_data(cfg.data, seed + t));

  for (int H : cfg.model.H) {
    std::vector<TrainTrace> traces;
    for (int t = 0; t < cfg.trials; ++t) {
      const TrialData& td = data[t];
      MetricContext ctx;
      ctx.test = td.test.examples.empty() ? nullptr : &td.test;
      if (td.mixture) {
        ctx.masks = &td.masks;
        ctx.W_planted = &td.targets.W_star;
        ctx.U_planted = &td.targets.U_star;
      } else {
        ctx.W_planted = &cfg.data.planted.W_star;
        ctx.U_planted = &cfg.data.planted.U_star;
      }
      TrainConfig tc = cfg.train;
      tc.seed = seed + t;
      tc.threads = threads;
      GroupedParams g0 = grouped_zeros(cfg.data.T(), cfg.data.d(), H);
      TrainTrace trace = train_grouped(td.train, g0, tc, ctx);
      if (!outdir.empty()) {
        char name[64];
        std::snprintf(name, sizeof(name), "/H%d_trial%d.csv", H, t);
        write_text(outdir + name, trace_to_csv(trace));
      }
      traces.push_back(trace);
      result.runs.push_back({H, t, std::move(trace)});
    }
    if (!outdir.empty()) {
      char name[64];
      std::snprintf(name, sizeof(name), "/H%d_aggregate.csv", H);
      write_text(outdir + name, aggregate_csv(traces));
    }
  }

  if (!outdir.empty()) {
    // one SVG per metric: mean over trials, one series per H
    for (int m = 0; m < 10; ++m) {
      std::vector<Series> series;
      for (size_t hi = 0; hi < cfg.model.H.size(); ++hi) {
        int H = cfg.model.H[hi];
        Series s;
        char lbl[32];
        std::snprintf(lbl, sizeof(lbl), "H=%d", H);
        s.label = lbl;
        size_t base = hi * cfg.trials;
        size_t rows = result.runs[base].trace.rows.size();
        for (size_t t = 1; t < static_cast<size_t>(cfg.trials); ++t)
          rows = std::min(rows, result.runs[base + t].trace.rows.size());
        for (size_t ri = 0; ri < rows; ++ri) {
          double mean = 0;
          for (int t = 0; t < cfg.trials; ++t)
            mean += metric_field(result.runs[base + t].trace.rows[ri], m);
          mean /= cfg.trials;
          s.x.push_back(result.runs[base].trace.rows[ri].k);
          s.y.push_back(mean);
        }
        series.push_back(std::move(s));
      }
      bool log_y = m == 0 || m == 1 || m == 3;
      write_text(outdir + "/" + kMetricNames[m] + ".svg",
                 svg_line_chart(kMetricNames[m], "iteration", kMetricNames[m], series, log_y));
    }
  }
  return result;
}

ExperimentResult reproduce(const std::string& figure, std::uint64_t seed,
                           const std::string& outdir, int threads) {
  return run_experiment(figure_config(figure), seed, outdir, threads);
}

int iterations_to_loss(const TrainTrace& trace, double threshold) {
  for (const auto& r : trace.rows)
    if (r.train_loss <= threshold) return r.k;
  return trace.rows.empty() ? 0 : trace.rows.back().k;
}

double gradcheck_max_rel_err(std::uint64_t seed) {
  Rng rng(seed, 7001);
  double worst = 0;
  for (int rep = 0; rep < 4; ++rep) {
    int T = 3 + rep % 3, d = 2 + rep % 2, H = 1 + rep % 3;
    ModelParams th;
    for (int h = 0; h < H; ++h) {
      HeadParams hp{Matrix(T, d), Matrix(d, d)};
      for (double& v : hp.U.a) v = rng.uniform(-1.0, 1.0);
      for (double& v : hp.W.a) v = rng.uniform(-1.0, 1.0);
      th.heads.push_back(std::move(hp));
    }
    std::vector<LabeledExample> ex;
    for (int i = 0; i < 3; ++i) {
      Matrix X(T, d);
      for (double& v : X.a) v = rng.uniform(-1.0, 1.0);
      ex.push_back({TokenMatrix(std::move(X)), rng.sign() > 0 ? 1 : -1});
    }
    Dataset data = Dataset::from(std::move(ex));

    Vec th_flat = flatten(th);
    int np = static_cast<int>(th_flat.size());
    const double h = 1e-5;

    // model gradient on the first example
    {
      std::vector<HeadGradient> g = grad_multi(data.examples[0].x, th);
      Vec ga;
      for (const auto& hg : g) {
        ga.insert(ga.end(), hg.dU.a.begin(), hg.dU.a.end());
        ga.insert(ga.end(), hg.dW.a.begin(), hg.dW.a.end());
      }
      Vec gf(np);
      for (int p = 0; p < np; ++p) {
        Vec plus = th_flat, minus = th_flat;
        plus[p] += h;
        minus[p] -= h;
        gf[p] = (forward_multi(data.examples[0].x, unflatten(plus, T, d, H)) -
                 forward_multi(data.examples[0].x, unflatten(minus, T, d, H))) /
                (2 * h);
      }
      double dn = 0, gn = 0;
      for (int p = 0; p < np; ++p) {
        dn += (ga[p] - gf[p]) * (ga[p] - gf[p]);
        gn += gf[p] * gf[p];
      }
      worst = std::max(worst, std::sqrt(dn) / std::max(1.0, std::sqrt(gn)));
    }

    // risk gradient
    {
      Vec ga = flatten(risk_gradient(data, th));
      double dn = 0, gn = 0;
      for (int p = 0; p < np; ++p) {
        Vec plus = th_flat, minus = th_flat;
        plus[p] += h;
        minus[p] -= h;
        double fd = (empirical_risk(data, unflatten(plus, T, d, H)) -
                     empirical_risk(data, unflatten(minus, T, d, H))) /
                    (2 * h);
        dn += (ga[p] - fd) * (ga[p] - fd);
        gn += fd * fd;
      }
      worst = std::max(worst, std::sqrt(dn) / std::max(1.0, std::sqrt(gn)));
    }
  }
  return worst;
}

std::string stability_csv(const std::vector<StabilityReport>& rows) {
  std::string out =
      "K,n,eta,avg_stability,stability_rhs,gap_estimate,gap_rhs,lipschitz_G,"
      "train_loss,test_loss,target_loss,D\n";
  char buf[512];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf),
                  "%d,%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.K, r.n,
                  r.eta, r.avg_stability, r.stability_rhs, r.gap_estimate, r.gap_rhs,
                  r.lipschitz_G, r.train_loss, r.test_loss, r.target_loss, r.D);
    out += buf;
  }
  return out;
}

}  // namespace mha
