#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mha/experiments.hpp"

using namespace mha;

namespace {

ExperimentConfig load_config(const std::string& path) {
  if (path.empty()) throw ConfigError("--config: required for this command");
  return parse_config(read_text(path));
}

int cmd_gen_data(const ExperimentConfig& cfg, std::uint64_t seed, const std::string& out) {
  ensure_dir(out);
  int total = cfg.data.n_train + cfg.data.n_test;
  if (cfg.data.type == "mixture") {
    MixtureSpec spec = cfg.data.mixture;
    spec.seed = seed;
    Dm1Result r = dm1_sample(spec, total);
    std::vector<LabeledExample> tr(r.data.examples.begin(), r.data.examples.begin() + cfg.data.n_train);
    std::vector<LabeledExample> te(r.data.examples.begin() + cfg.data.n_train, r.data.examples.end());
    write_text(out + "/train.jsonl", dataset_to_jsonl(Dataset::from(std::move(tr))));
    if (cfg.data.n_test > 0)
      write_text(out + "/test.jsonl", dataset_to_jsonl(Dataset::from(std::move(te))));
    write_text(out + "/masks.jsonl", masks_to_jsonl(r.masks));
    write_text(out + "/bounds.json", bounds_to_json(r.bounds) + "\n");
  } else {
    PlantedSpec spec = cfg.data.planted;
    spec.seed = seed;
    Dataset all = dm2_sample(spec, total);
    std::vector<LabeledExample> tr(all.examples.begin(), all.examples.begin() + cfg.data.n_train);
    std::vector<LabeledExample> te(all.examples.begin() + cfg.data.n_train, all.examples.end());
    write_text(out + "/train.jsonl", dataset_to_jsonl(Dataset::from(std::move(tr))));
    if (cfg.data.n_test > 0)
      write_text(out + "/test.jsonl", dataset_to_jsonl(Dataset::from(std::move(te))));
    write_text(out + "/teacher.json",
               model_to_json(ModelParams{{HeadParams{spec.U_star, spec.W_star}}}));
  }
  std::printf("wrote %d train / %d test examples to %s\n", cfg.data.n_train, cfg.data.n_test,
              out.c_str());
  return 0;
}

int cmd_margins(const ExperimentConfig& cfg, std::uint64_t seed, const std::string& out) {
  if (cfg.data.type != "mixture")
    throw ConfigError("margins: mixture data required");
  MixtureSpec spec = cfg.data.mixture;
  spec.seed = seed;
  Dm1Result r = dm1_sample(spec, cfg.data.n_train);
  int H = cfg.model.H.front();
  PhaseOneResult p1 = phase_one(r.data, H, seed, spec);
  GoodInitReport rep =
      good_init_check(r.data, p1.theta1, 0.05, spec, r.bounds, p1.P_empirical);
  std::printf("n=%d H=%d  Z_mu=%.6g Z_nu=%.6g Z=%.6g R=%.6g\n", cfg.data.n_train, H,
              r.bounds.Z_mu, r.bounds.Z_nu, r.bounds.Z, r.bounds.R);
  std::printf("P1 max_h ||theta_h||      %.6g (theory %.6g)  %s\n", rep.B2_emp, rep.B2_theory,
              rep.p1_pass ? "pass" : "FAIL");
  std::printf("P2 max_i |Phi~|           %.6g (theory %.6g)  %s\n", rep.B_phi_emp,
              rep.B_phi_theory, rep.p2_pass ? "pass" : "FAIL");
  std::printf("P3 min NTK margin         %.6g (gamma*/2 = %.6g)  %s\n", rep.ntk_margin_min,
              rep.gamma_star_formula / 2, rep.p3_pass ? "pass" : "FAIL");
  std::printf("gamma* formula            %.6g\n", rep.gamma_star_formula);
  std::printf("gamma_lin formula         %.6g (empirical %.6g)\n", gamma_lin(spec, r.bounds),
              gamma_lin_empirical(r.data, spec));
  std::printf("gamma_attn(0.1)           %.6g\n", gamma_attn(0.1, spec.S, spec.T, r.bounds.Z_mu));
  if (!out.empty()) {
    ensure_dir(out);
    char buf[512];
    std::snprintf(buf, sizeof(buf),
                  "{\"B2_emp\":%.17g,\"B_phi_emp\":%.17g,\"ntk_margin_min\":%.17g,"
                  "\"gamma_star\":%.17g,\"p1\":%s,\"p2\":%s,\"p3\":%s}\n",
                  rep.B2_emp, rep.B_phi_emp, rep.ntk_margin_min, rep.gamma_star_formula,
                  rep.p1_pass ? "true" : "false", rep.p2_pass ? "true" : "false",
                  rep.p3_pass ? "true" : "false");
    write_text(out + "/margins.json", buf);
  }
  return 0;
}

int cmd_bounds(const ExperimentConfig& cfg, std::uint64_t seed, const std::string& out,
               int threads) {
  int total = cfg.data.n_train;
  Dataset data;
  if (cfg.data.type == "mixture") {
    MixtureSpec spec = cfg.data.mixture;
    spec.seed = seed;
    data = dm1_sample(spec, total).data;
  } else {
    PlantedSpec spec = cfg.data.planted;
    spec.seed = seed;
    data = dm2_sample(spec, total);
  }
  std::string csv = loss_report_csv_header() + "\n";
  std::printf("%s\n", loss_report_csv_header().c_str());
  for (int H : cfg.model.H) {
    ModelParams th = model_from_grouped(grouped_zeros(cfg.data.T(), cfg.data.d(), H));
    LossReport rep = loss_report(data, th, th, threads);
    std::string row = loss_report_csv_row(rep);
    std::printf("%s\n", row.c_str());
    csv += row + "\n";
  }
  if (!out.empty()) {
    ensure_dir(out);
    write_text(out + "/bounds.csv", csv);
  }
  return 0;
}

int cmd_stability(const ExperimentConfig& cfg, std::uint64_t seed, const std::string& out,
                  int threads) {
  int total = cfg.data.n_train + cfg.data.n_test;
  Dataset train, test;
  if (cfg.data.type == "mixture") {
    MixtureSpec spec = cfg.data.mixture;
    spec.seed = seed;
    Dm1Result r = dm1_sample(spec, total);
    std::vector<LabeledExample> tr(r.data.examples.begin(), r.data.examples.begin() + cfg.data.n_train);
    std::vector<LabeledExample> te(r.data.examples.begin() + cfg.data.n_train, r.data.examples.end());
    train = Dataset::from(std::move(tr));
    test = Dataset::from(std::move(te));
  } else {
    PlantedSpec spec = cfg.data.planted;
    spec.seed = seed;
    Dataset all = dm2_sample(spec, total);
    std::vector<LabeledExample> tr(all.examples.begin(), all.examples.begin() + cfg.data.n_train);
    std::vector<LabeledExample> te(all.examples.begin() + cfg.data.n_train, all.examples.end());
    train = Dataset::from(std::move(tr));
    test = Dataset::from(std::move(te));
  }
  int H = cfg.model.H.front();
  GroupedParams g0 = grouped_zeros(cfg.data.T(), cfg.data.d(), H);
  std::vector<StabilityReport> rows;
  std::vector<int> checkpoints;
  for (int q = 1; q <= 4; ++q) {
    int k = cfg.train.K * q / 4;
    if (k >= 1 && (checkpoints.empty() || k != checkpoints.back())) checkpoints.push_back(k);
  }
  for (int k : checkpoints) {
    TrainConfig tc = cfg.train;
    tc.K = k;
    tc.threads = threads;
    tc.record_every = std::max(1, k);
    GroupedParams target;
    train_grouped(train, g0, tc, {}, &target);
    StabilityReport rep = avg_model_stability(train, g0, tc, test, target);
    rows.push_back(rep);
    std::printf("K=%d  avg_stability=%.6g (rhs %.6g)  gap=%.6g (rhs %.6g)\n", rep.K,
                rep.avg_stability, rep.stability_rhs, rep.gap_estimate, rep.gap_rhs);
  }
  if (!out.empty()) {
    ensure_dir(out);
    write_text(out + "/stability.csv", stability_csv(rows));
  }
  return 0;
}

int cmd_gradcheck() {
  double err = gradcheck_max_rel_err(0);
  std::printf("gradcheck max rel err %.3g\n", err);
  if (!(err <= 1e-5)) throw NumericError("gradcheck: max rel err above 1e-5");
  return 0;
}

int cmd_plot(const std::string& out) {
  if (out.empty()) throw ConfigError("--out: required for plot");
  namespace fs = std::filesystem;
  struct Agg {
    std::string label;
    std::vector<std::string> header;
    std::vector<std::vector<double>> rows;
  };
  std::vector<Agg> aggs;
  std::vector<fs::path> paths;
  for (const auto& e : fs::directory_iterator(out)) {
    std::string name = e.path().filename().string();
    if (name.size() > 14 && name.rfind("_aggregate.csv") == name.size() - 14)
      paths.push_back(e.path());
  }
  std::sort(paths.begin(), paths.end());
  for (const auto& p : paths) {
    Agg a;
    std::string name = p.filename().string();
    a.label = name.substr(0, name.size() - 14);
    std::string text = read_text(p.string());
    size_t pos = 0;
    bool first = true;
    while (pos < text.size()) {
      size_t eol = text.find('\n', pos);
      if (eol == std::string::npos) eol = text.size();
      std::string line = text.substr(pos, eol - pos);
      pos = eol + 1;
      if (line.empty()) continue;
      std::vector<std::string> cells;
      size_t c = 0;
      while (c <= line.size()) {
        size_t comma = line.find(',', c);
        if (comma == std::string::npos) comma = line.size();
        cells.push_back(line.substr(c, comma - c));
        c = comma + 1;
      }
      if (first) {
        a.header = cells;
        first = false;
      } else {
        std::vector<double> row;
        for (const auto& cell : cells) row.push_back(std::strtod(cell.c_str(), nullptr));
        a.rows.push_back(std::move(row));
      }
    }
    if (a.header.empty()) throw ConfigError("plot: empty aggregate file " + p.string());
    aggs.push_back(std::move(a));
  }
  if (aggs.empty()) throw ConfigError("plot: no *_aggregate.csv files in " + out);
  const auto& header = aggs[0].header;
  for (size_t col = 1; col < header.size(); ++col) {
    const std::string& name = header[col];
    if (name.size() < 5 || name.rfind("_mean") != name.size() - 5) continue;
    std::string metric = name.substr(0, name.size() - 5);
    std::vector<Series> series;
    for (const auto& a : aggs) {
      Series s;
      s.label = a.label;
      for (const auto& row : a.rows) {
        if (col >= row.size()) throw ConfigError("plot: short row in " + a.label);
        s.x.push_back(row[0]);
        s.y.push_back(row[col]);
      }
      series.push_back(std::move(s));
    }
    bool log_y = metric == "train_loss" || metric == "test_loss" || metric == "grad_norm";
    write_text(out + "/" + metric + ".svg",
               svg_line_chart(metric, "iteration", metric, series, log_y));
  }
  std::printf("wrote SVG plots to %s\n", out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multi-head softmax attention: training, certificates, figure reproduction"};
  app.require_subcommand(1);

  std::string config_path, out_dir, figure;
  std::uint64_t seed = 1;
  int threads = 1;
  app.add_option("--config", config_path, "experiment config JSON");
  app.add_option("--seed", seed, "top-level seed (trial i uses seed+i)");
  app.add_option("--out", out_dir, "output directory");
  app.add_option("--threads", threads, "worker threads");
  app.add_option("--figure", figure, "figure name for reproduce");

  CLI::App* gen = app.add_subcommand("gen-data", "sample a dataset to JSONL files");
  CLI::App* train = app.add_subcommand("train", "train per config, write traces");
  CLI::App* margins = app.add_subcommand("margins", "good-initialization certificate report");
  CLI::App* bounds = app.add_subcommand("bounds", "loss/gradient norm bound report");
  CLI::App* stability = app.add_subcommand("stability", "leave-one-out stability experiment");
  CLI::App* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient check");
  CLI::App* repro = app.add_subcommand("reproduce", "reproduce a synthetic figure");
  std::string figure_pos;
  repro->add_option("figure", figure_pos,
                    "context-gd | context-gd-sqrtH | context-adam | planted-gd | "
                    "planted-momentum | planted-adam");
  CLI::App* plot = app.add_subcommand("plot", "regenerate SVGs from aggregate CSVs in --out");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(load_config(config_path), seed,
                                           out_dir.empty() ? "out" : out_dir);
    if (train->parsed()) {
      ExperimentConfig cfg = load_config(config_path);
      std::string out = !out_dir.empty() ? out_dir : cfg.outputs.empty() ? "out" : cfg.outputs;
      run_experiment(cfg, seed, out, threads);
      std::printf("wrote traces to %s\n", out.c_str());
      return 0;
    }
    if (margins->parsed()) return cmd_margins(load_config(config_path), seed, out_dir);
    if (bounds->parsed()) return cmd_bounds(load_config(config_path), seed, out_dir, threads);
    if (stability->parsed())
      return cmd_stability(load_config(config_path), seed, out_dir, threads);
    if (gradcheck->parsed()) return cmd_gradcheck();
    if (repro->parsed()) {
      std::string fig = !figure_pos.empty() ? figure_pos : figure;
      if (fig.empty()) throw ConfigError("reproduce: figure name required");
      std::string out = out_dir.empty() ? ("out/" + fig) : out_dir;
      reproduce(fig, seed, out, threads);
      std::printf("wrote %s outputs to %s\n", fig.c_str(), out.c_str());
      return 0;
    }
    if (plot->parsed()) return cmd_plot(out_dir);
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric failure: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 2;
}
