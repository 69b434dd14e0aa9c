#pragma once

// Shared experiment fixtures: a synthetic dataset plus run configs written
// into a scratch directory.

#include <filesystem>
#include <string>

#include "modcascade/experiment.hpp"

namespace modcascade::fixture {

namespace fs = std::filesystem;

inline fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "modcascade_tests" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

inline Json preset(double error, double miss, const char* spread, double sigma) {
  return Json{{"preset", {{"error", error}, {"miss", miss}, {"spread", spread}}},
              {"negative_fp_rate", 0.05},
              {"loc_noise_sigma", sigma}};
}

inline Json noiseless() {
  return Json{{"preset", {{"error", 0.0}, {"miss", 0.0}}}, {"confidence", {{"spread", 0.0}}}};
}

/// Detector settings matching the reference error rates: 12% flat, 2.25% +
/// 2% miss at stage one, 2.3% per pair at stage two.
inline Json calibrated_detectors() {
  return Json{{"baseline", preset(0.12, 0.0, "siblings", 4.0)},
              {"stage1", preset(0.0225, 0.02, "uniform", 4.0)},
              {"stage2", {{"*", preset(0.023, 0.0, "siblings", 2.0)}}}};
}

inline Json noiseless_detectors() {
  return Json{{"baseline", noiseless()}, {"stage1", noiseless()}, {"stage2", {{"*", noiseless()}}}};
}

inline Json run_config(const Json& detectors, const std::string& mode, std::size_t threads = 1) {
  return Json{{"dataset", "dataset.json"},
              {"detectors", detectors},
              {"routing", {{"tau", 0.5}, {"mode", mode}}},
              {"eval", {{"iou_threshold", 0.5}}},
              {"threads", threads}};
}

/// Writes dataset.json and returns its directory.
inline fs::path write_dataset(const std::string& name, std::size_t per_class, std::size_t negatives,
                              std::size_t seq_len, std::uint64_t seed) {
  const auto dir = scratch(name);
  SynthConfig c;
  c.images_per_class = per_class;
  c.negatives = negatives;
  c.seq_len = seq_len;
  save_dataset(synthesize(c, seed), dir / "dataset.json");
  return dir;
}

inline fs::path write_config(const fs::path& dir, const std::string& file, const Json& config) {
  const auto path = dir / file;
  write_text_file(path, dump_json17(config));
  return path;
}

}  // namespace modcascade::fixture
