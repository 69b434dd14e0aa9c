#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <boost/random/uniform_real_distribution.hpp>

#include "modcascade/dataset.hpp"
#include "modcascade/detector.hpp"
#include "modcascade/errormodel.hpp"
#include "modcascade/eval.hpp"
#include "modcascade/json_io.hpp"
#include "modcascade/random.hpp"
#include "modcascade/report.hpp"
#include "modcascade/router.hpp"

namespace modcascade {

namespace fs = std::filesystem;

// ---------------------------------------------------------------- synth

struct SynthConfig {
  ClassTaxonomy taxonomy = paired_taxonomy();
  std::size_t images_per_class = 100;
  std::size_t negatives = 100;
  std::size_t seq_len = 0;  // 0: no sequences
  double width = 800;
  double height = 800;
  double min_box = 64;
  double max_box = 400;
};

inline SynthConfig synth_config_from_json(const Json& j) {
  SynthConfig c;
  try {
    if (j.contains("taxonomy")) c.taxonomy = taxonomy_from_json(j["taxonomy"]);
    c.images_per_class = j.value("images_per_class", c.images_per_class);
    c.negatives = j.value("negatives", c.negatives);
    c.seq_len = j.value("seq_len", c.seq_len);
    c.width = j.value("width", c.width);
    c.height = j.value("height", c.height);
    c.min_box = j.value("min_box", c.min_box);
    c.max_box = j.value("max_box", c.max_box);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("synth config: ") + e.what());
  }
  if (!(c.width >= 1 && c.height >= 1)) throw ValidationError("synth config: image size must be >= 1");
  if (!(c.min_box >= 1 && c.min_box <= c.max_box && c.max_box <= std::min(c.width, c.height))) {
    throw ValidationError("synth config: need 1 <= min_box <= max_box <= image size");
  }
  return c;
}

/// K single-object images per fine class (integer pixel boxes), then the
/// negative images. With seq_len > 0 each class's images are cut into runs of
/// seq_len consecutive images.
inline Dataset synthesize(const SynthConfig& config, std::uint64_t seed) {
  Dataset ds;
  ds.taxonomy = config.taxonomy;
  Engine rng(mix_seed(seed, "synth"));
  boost::random::uniform_real_distribution<double> unit(0.0, 1.0);
  std::size_t next_id = 0;
  const auto make_id = [&] {
    std::string digits = std::to_string(++next_id);
    return "img" + std::string(digits.size() < 6 ? 6 - digits.size() : 0, '0') + digits;
  };
  std::vector<Sequence> sequences;
  for (const auto& fine : config.taxonomy.fine_labels()) {
    Sequence run;
    for (std::size_t k = 0; k < config.images_per_class; ++k) {
      AnnotatedImage img;
      img.id = make_id();
      img.width = config.width;
      img.height = config.height;
      const double w = std::round(config.min_box + (config.max_box - config.min_box) * unit(rng));
      const double h = std::round(config.min_box + (config.max_box - config.min_box) * unit(rng));
      const double x = std::floor((config.width - w) * unit(rng));
      const double y = std::floor((config.height - h) * unit(rng));
      img.objects.push_back({BoundingBox{x, y, w, h}, fine});
      if (config.seq_len > 0) {
        run.push_back(img.id);
        if (run.size() == config.seq_len) sequences.push_back(std::exchange(run, {}));
      }
      ds.images.push_back(std::move(img));
    }
    if (!run.empty()) sequences.push_back(std::move(run));
  }
  for (std::size_t k = 0; k < config.negatives; ++k) {
    AnnotatedImage img;
    img.id = make_id();
    img.width = config.width;
    img.height = config.height;
    ds.images.push_back(std::move(img));
  }
  if (config.seq_len > 0) ds.sequences = std::move(sequences);
  validate_dataset(ds);
  return ds;
}

// ---------------------------------------------------------------- run

/// Raw detector description; resolved against the taxonomy once the dataset is loaded.
struct DetectorSpec {
  Json json;
};

struct RunConfig {
  fs::path dataset_path;
  std::optional<ClassTaxonomy> taxonomy;
  DetectorSpec baseline;
  DetectorSpec stage1;
  std::map<Label, DetectorSpec> stage2;  // "*" applies to every general without its own entry
  RoutingConfig routing;
  double iou_threshold = 0.5;
  std::optional<std::uint64_t> seed;
};

inline RunConfig run_config_from_json(const Json& j, const fs::path& base_dir) {
  RunConfig c;
  try {
    if (!j.contains("dataset") || !j["dataset"].is_string()) throw ValidationError("run config: 'dataset' path missing");
    c.dataset_path = fs::path(j["dataset"].get<std::string>());
    if (c.dataset_path.is_relative()) c.dataset_path = base_dir / c.dataset_path;
    if (j.contains("taxonomy")) c.taxonomy = taxonomy_from_json(j["taxonomy"]);
    if (!j.contains("detectors")) throw ValidationError("run config: 'detectors' missing");
    const auto& jd = j["detectors"];
    for (const char* key : {"baseline", "stage1", "stage2"}) {
      if (!jd.contains(key)) throw ValidationError(std::string("run config: detectors.") + key + " missing");
    }
    c.baseline.json = jd["baseline"];
    c.stage1.json = jd["stage1"];
    for (const auto& [g, spec] : jd["stage2"].items()) c.stage2[g].json = spec;
    if (j.contains("routing")) {
      const auto& jr = j["routing"];
      c.routing.tau = jr.value("tau", c.routing.tau);
      const std::string mode = jr.value("mode", std::string("v1"));
      if (mode == "v1" || mode == "V1") {
        c.routing.mode = RoutingMode::V1;
      } else if (mode == "v2" || mode == "V2") {
        c.routing.mode = RoutingMode::V2;
      } else {
        throw ValidationError("run config: routing.mode must be v1 or v2");
      }
    }
    if (j.contains("eval")) c.iou_threshold = j["eval"].value("iou_threshold", c.iou_threshold);
    c.routing.threads = j.value("threads", std::size_t{1});
    if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("run config: ") + e.what());
  }
  if (!(c.routing.tau >= 0 && c.routing.tau <= 1)) throw ValidationError("run config: tau must lie in [0,1]");
  if (!(c.iou_threshold > 0 && c.iou_threshold <= 1)) throw ValidationError("run config: iou_threshold must lie in (0,1]");
  return c;
}

namespace detail {

inline void apply_common_fields(const Json& j, DetectorProfile& p) {
  p.negative_fp_rate = j.value("negative_fp_rate", p.negative_fp_rate);
  p.loc_noise_sigma = j.value("loc_noise_sigma", p.loc_noise_sigma);
  if (j.contains("fp_label_weights")) {
    for (const auto& [label, w] : j["fp_label_weights"].items()) p.fp_label_weights[label] = w.get<double>();
  }
  if (j.contains("confidence")) {
    const auto& c = j["confidence"];
    p.confidence.mean_correct = c.value("mean_correct", p.confidence.mean_correct);
    p.confidence.mean_wrong = c.value("mean_wrong", p.confidence.mean_wrong);
    p.confidence.spread = c.value("spread", p.confidence.spread);
  }
}

/// Resolves a detector spec for a role whose emittable labels are `role_labels`.
inline DetectorHandle build_detector(const DetectorSpec& spec, const std::string& role,
                                     const std::vector<Label>& role_labels, const ClassTaxonomy& taxonomy,
                                     std::uint64_t seed) {
  const Json& j = spec.json;
  if (!j.is_object()) throw ValidationError("detector " + role + ": spec must be an object");
  try {
    if (j.contains("external")) {
      return DetectorHandle::external(j["external"].get<std::string>(), j.value("path_prefix", std::string()));
    }
    DetectorProfile profile;
    if (j.contains("preset")) {
      const auto& jp = j["preset"];
      PresetSpec preset;
      preset.error = jp.value("error", 0.0);
      preset.miss = jp.value("miss", 0.0);
      preset.foreign_detect = jp.value("foreign_detect", 1.0);
      const std::string spread = jp.value("spread", std::string("siblings"));
      if (spread == "siblings") {
        preset.spread = ErrorSpread::Siblings;
      } else if (spread == "uniform") {
        preset.spread = ErrorSpread::Uniform;
      } else {
        throw ValidationError("detector " + role + ": preset.spread must be siblings or uniform");
      }
      profile = make_preset_profile(taxonomy, role_labels, preset);
      apply_common_fields(j, profile);
      check_profile(profile, role);
    } else {
      Json explicit_json = j;
      if (!explicit_json.contains("label_space")) explicit_json["label_space"] = role_labels;
      profile = profile_from_json(explicit_json, role);
    }
    for (const auto& l : profile.label_space) {
      if (std::find(role_labels.begin(), role_labels.end(), l) == role_labels.end()) {
        throw ValidationError("detector " + role + ": label '" + l + "' is outside its level of the taxonomy");
      }
    }
    return DetectorHandle::simulated(std::move(profile), seed, taxonomy);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("detector " + role + ": " + e.what());
  }
}

}  // namespace detail

struct Detectors {
  DetectorHandle baseline;
  DetectorHandle stage1;
  Stage2Networks stage2;
};

/// Each role draws from its own seed derived from the run seed.
inline Detectors build_detectors(const RunConfig& config, const ClassTaxonomy& taxonomy, std::uint64_t seed) {
  Stage2Networks stage2;
  for (const auto& g : taxonomy.generals()) {
    auto it = config.stage2.find(g);
    if (it == config.stage2.end()) it = config.stage2.find("*");
    if (it == config.stage2.end()) throw ValidationError("run config: no stage-2 detector for general class " + g);
    stage2.emplace(g, detail::build_detector(it->second, "stage2/" + g, taxonomy.fine_of(g), taxonomy,
                                             mix_seed(seed, "stage2/" + g)));
  }
  for (const auto& [g, spec] : config.stage2) {
    if (g != "*" && !taxonomy.is_general(g)) throw ValidationError("run config: stage2 entry for unknown class " + g);
  }
  auto baseline =
      detail::build_detector(config.baseline, "baseline", taxonomy.fine_labels(), taxonomy, mix_seed(seed, "baseline"));
  auto stage1 = detail::build_detector(config.stage1, "stage1", taxonomy.generals(), taxonomy, mix_seed(seed, "stage1"));
  return Detectors{std::move(baseline), std::move(stage1), std::move(stage2)};
}

inline std::vector<std::vector<Detection>> run_flat(const Dataset& dataset, const DetectorHandle& detector,
                                                    std::size_t threads) {
  std::vector<std::vector<Detection>> out(dataset.images.size());
  parallel_for(dataset.images.size(), threads, [&](std::size_t i) {
    try {
      out[i] = detector.detect(dataset.images[i]);
    } catch (const Error& e) {
      detail::rethrow_for_image(e, dataset.images[i].id);
    }
  });
  return out;
}

struct AdvantageEvaluation {
  double a = 0;
  double delta1 = 0;
  double delta2 = 0;
  AdvantageResult result;
};

/// a = flat accuracy, a+delta1 = stage-1 accuracy, and a+delta2 = the
/// stage-2 factor that together with stage 1 yields the cascade accuracy.
inline std::optional<AdvantageEvaluation> measured_advantage(const EvalReport& baseline, const EvalReport& stage1,
                                                             const EvalReport& modular) {
  if (!baseline.classification_error || !stage1.classification_error || !modular.classification_error) {
    return std::nullopt;
  }
  const double a = 1.0 - *baseline.classification_error;
  const double acc1 = 1.0 - *stage1.classification_error;
  const double acc_cascade = 1.0 - *modular.classification_error;
  if (!(acc1 > 0)) return std::nullopt;
  AdvantageEvaluation out;
  out.a = a;
  out.delta1 = acc1 - a;
  out.delta2 = acc_cascade / acc1 - a;
  if (a + out.delta2 > 1.0) return std::nullopt;
  out.result = modular_advantage(out.a, out.delta1, out.delta2);
  return out;
}

struct ExperimentResult {
  EvalReport baseline;
  EvalReport stage1;
  EvalReport modular;
  TreeVsFlat tree_vs_flat;
  std::optional<AdvantageEvaluation> advantage;
  Json report;
};

/// Builds every report number from detections alone.
inline ExperimentResult build_report(const Dataset& dataset, const std::vector<std::vector<Detection>>& baseline_dets,
                                     const CascadeOutput& cascade, const RoutingConfig& routing, double iou_threshold,
                                     std::uint64_t seed) {
  ExperimentResult r;
  r.baseline = evaluate_flat(dataset, baseline_dets, iou_threshold, LabelLevel::Fine);
  std::vector<std::vector<Detection>> stage1_dets;
  stage1_dets.reserve(cascade.trace.images.size());
  for (const auto& t : cascade.trace.images) stage1_dets.push_back(t.stage1);
  r.stage1 = evaluate_flat(dataset, stage1_dets, iou_threshold, LabelLevel::General);
  r.modular = evaluate_cascade(dataset, cascade, iou_threshold);
  r.tree_vs_flat = compare_tree_vs_flat(cascade.trace, dataset.taxonomy.general_count());
  r.advantage = measured_advantage(r.baseline, r.stage1, r.modular);

  std::map<Label, std::size_t> per_network;
  for (const auto& g : dataset.taxonomy.generals()) per_network[g] = 0;
  for (const auto& t : cascade.trace.images) {
    for (const auto& g : t.invoked) ++per_network[g];
  }
  Json by_network = Json::object();
  for (const auto& [g, n] : per_network) by_network[g] = n;

  Json advantage = nullptr;
  if (r.advantage) {
    advantage = Json{{"a", r.advantage->a},
                     {"delta1", r.advantage->delta1},
                     {"delta2", r.advantage->delta2},
                     {"advantage", r.advantage->result.advantage},
                     {"lhs", r.advantage->result.lhs},
                     {"rhs", r.advantage->result.rhs}};
  }
  r.report = Json{
      {"seed", seed},
      {"images", dataset.images.size()},
      {"positive_images", dataset.positive_count()},
      {"baseline", to_json(r.baseline)},
      {"stage1", to_json(r.stage1)},
      {"modular", to_json(r.modular)},
      {"trace",
       {{"mode", to_string(routing.mode)},
        {"tau", routing.tau},
        {"stage1_inferences", cascade.trace.stage1_inferences},
        {"stage2_inferences", cascade.trace.stage2_inferences},
        {"stage2_by_network", by_network}}},
      {"tree_vs_flat",
       {{"tree_inferences", r.tree_vs_flat.tree_inferences},
        {"flat_inferences", r.tree_vs_flat.flat_inferences},
        {"n_fine_networks", dataset.taxonomy.general_count()},
        {"ratio", r.tree_vs_flat.ratio}}},
      {"advantage", advantage},
      {"iou_threshold", iou_threshold}};
  return r;
}

struct ExperimentRun {
  ExperimentResult result;
  std::vector<std::vector<Detection>> baseline_detections;
  CascadeOutput cascade;
};

/// Flat baseline, then the cascade, then evaluation.
inline ExperimentRun run_experiment(const Dataset& dataset, const RunConfig& config, std::uint64_t seed) {
  if (config.taxonomy && !(*config.taxonomy == dataset.taxonomy)) {
    throw ValidationError("run config taxonomy differs from the dataset taxonomy");
  }
  const auto detectors = build_detectors(config, dataset.taxonomy, seed);
  ExperimentRun run;
  run.baseline_detections = run_flat(dataset, detectors.baseline, config.routing.threads);
  run.cascade = route(dataset, detectors.stage1, detectors.stage2, config.routing);
  run.result = build_report(dataset, run.baseline_detections, run.cascade, config.routing, config.iou_threshold, seed);
  return run;
}

inline Json run_trace_json(const Dataset& dataset, const ExperimentRun& run) {
  Json baseline = Json::array();
  for (const auto& dets : run.baseline_detections) baseline.push_back(detections_to_json(dets));
  return Json{{"cascade", trace_to_json(dataset, run.cascade.trace)}, {"baseline", baseline}};
}

inline std::string pr_curves_csv(const Dataset& dataset, const ExperimentRun& run, double iou_threshold) {
  std::string out = "system,class,rank,confidence,precision,recall\n";
  const auto emit = [&](const std::string& system, const MatchResult& match) {
    for (const auto& cls : dataset.taxonomy.fine_labels()) {
      for (const auto& p : precision_recall_curve(cls, match, &dataset.taxonomy)) {
        out += system + "," + cls + "," + std::to_string(p.rank) + "," + format_double17(p.confidence) + "," +
               format_double17(p.precision) + "," + format_double17(p.recall) + "\n";
      }
    }
  };
  emit("baseline", match_dataset(dataset, run.baseline_detections, iou_threshold));
  emit("modular", match_dataset(dataset, run.cascade.detections, iou_threshold));
  return out;
}

// ---------------------------------------------------------------- commands

inline void ensure_directory(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());
}

inline fs::path cmd_synth(const fs::path& config_path, std::uint64_t seed, const fs::path& out_dir) {
  const auto config = synth_config_from_json(read_json_file(config_path));
  const auto dataset = synthesize(config, seed);
  ensure_directory(out_dir);
  const auto path = out_dir / "dataset.json";
  save_dataset(dataset, path);
  return path;
}

struct RunOptions {
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
};

/// Writes report.json, trace.json and pr_curves.csv into out_dir.
inline ExperimentResult cmd_run(const fs::path& config_path, const RunOptions& options, const fs::path& out_dir) {
  auto config = run_config_from_json(read_json_file(config_path), config_path.parent_path());
  if (options.threads) config.routing.threads = *options.threads;
  const std::uint64_t seed = options.seed ? *options.seed : config.seed.value_or(0);
  const auto dataset = load_dataset(config.dataset_path);
  auto run = run_experiment(dataset, config, seed);
  ensure_directory(out_dir);
  write_text_file(out_dir / "report.json", dump_json17(run.result.report));
  write_text_file(out_dir / "trace.json", dump_json17(run_trace_json(dataset, run)));
  write_text_file(out_dir / "pr_curves.csv", pr_curves_csv(dataset, run, config.iou_threshold));
  return std::move(run.result);
}

struct ErrorModelSummary {
  Label c0;
  Label c1;
  double bayes_error = 0;
  std::optional<double> feature_count;
  std::optional<bool> over_capacity;
  Json json;
};

/// Pair defaults to the file's "pair" entry, else its first two classes.
inline ErrorModelSummary cmd_errormodel(const fs::path& model_path, std::optional<Label> c0, std::optional<Label> c1,
                                       const fs::path& out_dir) {
  const Json doc = read_json_file(model_path);
  const auto file = model_from_json(doc);
  if (doc.contains("pair") && doc["pair"].is_array() && doc["pair"].size() == 2) {
    if (!c0) c0 = doc["pair"][0].get<std::string>();
    if (!c1) c1 = doc["pair"][1].get<std::string>();
  }
  if (!c0 || !c1) {
    if (file.model.classes.size() < 2) throw ValidationError("feature model needs two classes for a pair");
    if (!c0) c0 = file.model.classes[0];
    if (!c1) c1 = file.model.classes[*c0 == file.model.classes[1] ? 0 : 1];
  }
  ErrorModelSummary s;
  s.c0 = *c0;
  s.c1 = *c1;
  const auto rows = pdf_curves(file.model, s.c0, s.c1);
  s.bayes_error = bayes_error(file.model, s.c0, s.c1);
  s.json = Json{{"c0", s.c0}, {"c1", s.c1}, {"n_features", file.model.n_features()}, {"bayes_error", s.bayes_error}};
  if (file.budget) {
    s.feature_count = feature_count(*file.budget);
    s.over_capacity = over_capacity(*file.budget);
    s.json["feature_count"] = *s.feature_count;
    s.json["total_features"] = file.budget->total();
    s.json["over_capacity"] = s.over_capacity ? Json(*s.over_capacity) : Json(nullptr);
  } else {
    s.json["feature_count"] = nullptr;
    s.json["over_capacity"] = nullptr;
  }
  ensure_directory(out_dir);
  write_text_file(out_dir / "curves.csv", curves_csv(rows));
  write_text_file(out_dir / "summary.json", dump_json17(s.json));
  return s;
}

}  // namespace modcascade
