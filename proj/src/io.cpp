#include "mha/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace mha {

using nlohmann::json;

namespace {

json matrix_to_json(const Matrix& m) {
  json rows = json::array();
  for (int r = 0; r < m.rows; ++r) {
    json row = json::array();
    for (int c = 0; c < m.cols; ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

Matrix matrix_from_json(const json& j, const char* what) {
  if (!j.is_array() || j.empty()) throw ConfigError(std::string(what) + ": matrix expected");
  int rows = static_cast<int>(j.size());
  if (!j[0].is_array() || j[0].empty())
    throw ConfigError(std::string(what) + ": matrix rows expected");
  int cols = static_cast<int>(j[0].size());
  Matrix m(rows, cols);
  for (int r = 0; r < rows; ++r) {
    if (!j[r].is_array() || static_cast<int>(j[r].size()) != cols)
      throw ConfigError(std::string(what) + ": ragged matrix");
    for (int c = 0; c < cols; ++c) {
      if (!j[r][c].is_number()) throw ConfigError(std::string(what) + ": numeric entry expected");
      m(r, c) = j[r][c].get<double>();
    }
  }
  return m;
}

}  // namespace

std::string model_to_json(const ModelParams& th) {
  th.check_consistent();
  json j;
  j["T"] = th.T();
  j["d"] = th.d();
  j["H"] = th.H();
  json heads = json::array();
  for (const auto& h : th.heads) {
    json hj;
    hj["U"] = matrix_to_json(h.U);
    hj["W"] = matrix_to_json(h.W);
    heads.push_back(std::move(hj));
  }
  j["heads"] = std::move(heads);
  return j.dump();
}

ModelParams model_from_json(const std::string& text) {
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded()) throw ConfigError("model JSON: parse error");
  for (const auto& [k, v] : j.items()) {
    (void)v;
    if (k != "T" && k != "d" && k != "H" && k != "heads")
      throw ConfigError("model JSON: unknown key '" + k + "'");
  }
  if (!j.contains("T") || !j.contains("d") || !j.contains("heads"))
    throw ConfigError("model JSON: T, d, heads required");
  int T = j["T"].get<int>(), d = j["d"].get<int>();
  ModelParams th;
  for (const auto& hj : j["heads"]) {
    for (const auto& [k, v] : hj.items()) {
      (void)v;
      if (k != "U" && k != "W") throw ConfigError("model JSON: unknown head key '" + k + "'");
    }
    HeadParams h{matrix_from_json(hj.at("U"), "model JSON U"),
                 matrix_from_json(hj.at("W"), "model JSON W")};
    if (h.U.rows != T || h.U.cols != d || h.W.rows != d || h.W.cols != d)
      throw ConfigError("model JSON: head shape mismatch");
    th.heads.push_back(std::move(h));
  }
  if (j.contains("H") && j["H"].get<int>() != th.H())
    throw ConfigError("model JSON: H disagrees with heads length");
  th.check_consistent();
  return th;
}

std::string dataset_to_jsonl(const Dataset& data) {
  std::string out;
  for (const auto& e : data.examples) {
    json j;
    j["y"] = e.y;
    j["X"] = matrix_to_json(e.x.X);
    out += j.dump();
    out += '\n';
  }
  return out;
}

Dataset dataset_from_jsonl(const std::string& text) {
  std::vector<LabeledExample> ex;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded()) throw ConfigError("dataset JSONL: parse error");
    for (const auto& [k, v] : j.items()) {
      (void)v;
      if (k != "y" && k != "X") throw ConfigError("dataset JSONL: unknown key '" + k + "'");
    }
    if (!j.contains("y") || !j.contains("X"))
      throw ConfigError("dataset JSONL: y and X required");
    ex.push_back({TokenMatrix(matrix_from_json(j["X"], "dataset X")), j["y"].get<int>()});
  }
  return Dataset::from(std::move(ex));
}

std::string masks_to_jsonl(const std::vector<RelevantMask>& masks) {
  std::string out;
  for (const auto& m : masks) {
    json j;
    j["rel"] = m.rel;
    out += j.dump();
    out += '\n';
  }
  return out;
}

std::vector<RelevantMask> masks_from_jsonl(const std::string& text) {
  std::vector<RelevantMask> masks;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded()) throw ConfigError("masks JSONL: parse error");
    RelevantMask m;
    m.rel = j.at("rel").get<std::vector<int>>();
    masks.push_back(std::move(m));
  }
  return masks;
}

std::string bounds_to_json(const NoiseBounds& b) {
  json j;
  j["Z_mu"] = b.Z_mu;
  j["Z_nu"] = b.Z_nu;
  j["Z"] = b.Z;
  j["R"] = b.R;
  return j.dump();
}

void write_text(const std::string& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot open for writing: " + path);
  f << content;
  if (!f) throw ConfigError("write failed: " + path);
}

std::string read_text(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot open: " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void ensure_dir(const std::string& path) {
  std::error_code ec;
  std::filesystem::create_directories(path, ec);
  if (ec) throw ConfigError("cannot create directory: " + path);
}

std::string trace_to_csv(const TrainTrace& trace) {
  std::string out = trace_csv_header();
  out += '\n';
  for (const auto& r : trace.rows) {
    out += trace_csv_row(r);
    out += '\n';
  }
  return out;
}

std::string aggregate_csv(const std::vector<TrainTrace>& traces) {
  if (traces.empty()) throw DimError("aggregate_csv: at least one trace required");
  size_t rows = traces[0].rows.size();
  for (const auto& t : traces)
    if (t.rows.size() != rows) throw DimError("aggregate_csv: iteration grids differ");
  const char* names[] = {"train_loss", "test_loss",     "min_margin", "grad_norm",
                         "dist_to_init", "avg_W_norm",  "avg_U_norm", "attn_rel_mass",
                         "align_W",      "align_U"};
  std::string out = "iter";
  for (const char* nm : names) {
    out += ",";
    out += nm;
    out += "_mean,";
    out += nm;
    out += "_std";
  }
  out += '\n';
  auto field = [](const TraceRow& r, int idx) -> double {
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
      default: return idx == 9 ? r.align_U : 0.0;
    }
  };
  char buf[64];
  for (size_t ri = 0; ri < rows; ++ri) {
    int k = traces[0].rows[ri].k;
    for (const auto& t : traces)
      if (t.rows[ri].k != k) throw DimError("aggregate_csv: iteration grids differ");
    std::snprintf(buf, sizeof(buf), "%d", k);
    out += buf;
    for (int f = 0; f < 10; ++f) {
      double mean = 0;
      for (const auto& t : traces) mean += field(t.rows[ri], f);
      mean /= traces.size();
      double var = 0;
      for (const auto& t : traces) {
        double dv = field(t.rows[ri], f) - mean;
        var += dv * dv;
      }
      double sd = traces.size() > 1 ? std::sqrt(var / (traces.size() - 1)) : 0.0;
      std::snprintf(buf, sizeof(buf), ",%.17g,%.17g", mean, sd);
      out += buf;
    }
    out += '\n';
  }
  return out;
}

namespace {

std::string esc(const std::string& s) {
  std::string r;
  for (char c : s) {
    if (c == '&') r += "&amp;";
    else if (c == '<') r += "&lt;";
    else if (c == '>') r += "&gt;";
    else r += c;
  }
  return r;
}

std::string fmt_tick(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.4g", v);
  return buf;
}

}  // namespace

std::string svg_line_chart(const std::string& title, const std::string& xlabel,
                           const std::string& ylabel, const std::vector<Series>& series,
                           bool log_y) {
  const double W = 800, Hh = 500;
  const double ml = 70, mr = 160, mt = 50, mb = 55;
  const double pw = W - ml - mr, ph = Hh - mt - mb;
  const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                          "#8c564b", "#17becf", "#7f7f7f"};

  auto ty = [&](double v) { return log_y ? std::log10(v) : v; };
  double xmin = 0, xmax = 1, ymin = 0, ymax = 1;
  bool have = false;
  for (const auto& s : series) {
    for (size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
      double yv = s.y[i];
      if (!std::isfinite(yv)) continue;
      if (log_y && yv <= 0) continue;
      double xv = s.x[i], tv = ty(yv);
      if (!have) {
        xmin = xmax = xv;
        ymin = ymax = tv;
        have = true;
      } else {
        xmin = std::min(xmin, xv);
        xmax = std::max(xmax, xv);
        ymin = std::min(ymin, tv);
        ymax = std::max(ymax, tv);
      }
    }
  }
  if (!have) {
    xmin = ymin = 0;
    xmax = ymax = 1;
  }
  if (xmax == xmin) xmax = xmin + 1;
  if (ymax == ymin) ymax = ymin + 1;
  double ypad = 0.05 * (ymax - ymin);
  ymin -= ypad;
  ymax += ypad;

  auto px = [&](double x) { return ml + (x - xmin) / (xmax - xmin) * pw; };
  auto py = [&](double yv) { return mt + ph - (ty(yv) - ymin) / (ymax - ymin) * ph; };

  std::ostringstream svg;
  char buf[256];
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 800 500\" "
         "font-family=\"sans-serif\">\n";
  svg << "<rect width=\"800\" height=\"500\" fill=\"white\"/>\n";
  svg << "<text x=\"400\" y=\"28\" text-anchor=\"middle\" font-size=\"17\">" << esc(title)
      << "</text>\n";
  // axes
  std::snprintf(buf, sizeof(buf),
                "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"black\"/>\n", ml,
                mt + ph, ml + pw, mt + ph);
  svg << buf;
  std::snprintf(buf, sizeof(buf),
                "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"black\"/>\n", ml,
                mt, ml, mt + ph);
  svg << buf;
  // ticks
  for (int i = 0; i <= 5; ++i) {
    double fx = xmin + (xmax - xmin) * i / 5.0;
    double X = px(fx);
    std::snprintf(buf, sizeof(buf),
                  "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"black\"/>\n", X,
                  mt + ph, X, mt + ph + 5);
    svg << buf;
    std::snprintf(buf, sizeof(buf),
                  "<text x=\"%.1f\" y=\"%.1f\" text-anchor=\"middle\" font-size=\"12\">%s</text>\n",
                  X, mt + ph + 20, fmt_tick(fx).c_str());
    svg << buf;
    double fy = ymin + (ymax - ymin) * i / 5.0;
    double Y = mt + ph - (fy - ymin) / (ymax - ymin) * ph;
    std::snprintf(buf, sizeof(buf),
                  "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"black\"/>\n",
                  ml - 5, Y, ml, Y);
    svg << buf;
    double val = log_y ? std::pow(10.0, fy) : fy;
    std::snprintf(buf, sizeof(buf),
                  "<text x=\"%.1f\" y=\"%.1f\" text-anchor=\"end\" font-size=\"12\">%s</text>\n",
                  ml - 9, Y + 4, fmt_tick(val).c_str());
    svg << buf;
  }
  std::snprintf(buf, sizeof(buf),
                "<text x=\"%.1f\" y=\"%.1f\" text-anchor=\"middle\" font-size=\"14\">%s</text>\n",
                ml + pw / 2, Hh - 12, esc(xlabel).c_str());
  svg << buf;
  std::snprintf(buf, sizeof(buf),
                "<text x=\"18\" y=\"%.1f\" text-anchor=\"middle\" font-size=\"14\" "
                "transform=\"rotate(-90 18 %.1f)\">%s</text>\n",
                mt + ph / 2, mt + ph / 2, esc(ylabel).c_str());
  svg << buf;
  // series
  for (size_t si = 0; si < series.size(); ++si) {
    const char* color = colors[si % 8];
    std::string points;
    bool open = false;
    auto flush = [&]() {
      if (open && !points.empty()) {
        svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.8\" points=\""
            << points << "\"/>\n";
      }
      points.clear();
      open = false;
    };
    const auto& s = series[si];
    for (size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
      double yv = s.y[i];
      if (!std::isfinite(yv) || (log_y && yv <= 0)) {
        flush();
        continue;
      }
      std::snprintf(buf, sizeof(buf), "%.2f,%.2f ", px(s.x[i]), py(yv));
      points += buf;
      open = true;
    }
    flush();
    // legend
    double ly = mt + 14 + 20 * static_cast<double>(si);
    std::snprintf(buf, sizeof(buf),
                  "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"%s\" "
                  "stroke-width=\"2\"/>\n",
                  ml + pw + 12, ly, ml + pw + 36, ly, color);
    svg << buf;
    std::snprintf(buf, sizeof(buf),
                  "<text x=\"%.1f\" y=\"%.1f\" font-size=\"12\">%s</text>\n", ml + pw + 42,
                  ly + 4, esc(s.label).c_str());
    svg << buf;
  }
  svg << "</svg>\n";
  return svg.str();
}

}  // namespace mha
