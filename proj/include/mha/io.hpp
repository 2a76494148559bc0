#pragma once

#include <string>

#include "mha/training.hpp"

namespace mha {

// model JSON: {"T":..,"d":..,"H":..,"heads":[{"U":[[..]],"W":[[..]]}, ...]}
std::string model_to_json(const ModelParams& th);
ModelParams model_from_json(const std::string& text);

// dataset JSON lines, one example per line: {"y":1,"X":[[..],[..]]}
std::string dataset_to_jsonl(const Dataset& data);
Dataset dataset_from_jsonl(const std::string& text);

// masks sidecar, one line per example: {"rel":[..]}
std::string masks_to_jsonl(const std::vector<RelevantMask>& masks);
std::vector<RelevantMask> masks_from_jsonl(const std::string& text);

std::string bounds_to_json(const NoiseBounds& b);

void write_text(const std::string& path, const std::string& content);
std::string read_text(const std::string& path);
void ensure_dir(const std::string& path);

// trace CSV (fixed header, %.17g fields, "nan" for missing metrics)
std::string trace_to_csv(const TrainTrace& trace);

// per-iteration mean and sample std over trials; requires identical
// iteration grids across the traces
std::string aggregate_csv(const std::vector<TrainTrace>& traces);

struct Series {
  std::string label;
  Vec x, y;  // NaN y-values break the polyline
};

// self-contained SVG line chart (no external assets)
std::string svg_line_chart(const std::string& title, const std::string& xlabel,
                           const std::string& ylabel, const std::vector<Series>& series,
                           bool log_y = false);

}  // namespace mha
