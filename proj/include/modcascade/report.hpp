#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "modcascade/dataset.hpp"
#include "modcascade/eval.hpp"
#include "modcascade/json_io.hpp"
#include "modcascade/router.hpp"

namespace modcascade {

struct EvalReport {
  std::map<Label, double> per_class_ap;
  double map = 0;
  std::optional<double> classification_error;
  std::optional<double> classification_error_general;
  std::size_t matched_detections = 0;
  ConfusionMatrix confusion;
  ConfusionMatrix confusion_general;
  std::size_t fn_image_count = 0;
  std::size_t stage1_inferences = 0;
  std::size_t stage2_inferences = 0;
  // Cascade only: mAP over images that reached their networks, before FN accounting.
  std::optional<double> stage2_map;
  std::optional<std::size_t> routed_positive_images;
};

namespace detail {

inline std::optional<double> error_or_none(const MatchResult& match, LabelLevel level, const ClassTaxonomy& tax) {
  if (count_matches(match).matched == 0) return std::nullopt;
  return classification_error(match, level, tax);
}

}  // namespace detail

/// Single-network evaluation at the given label level (fine for the flat
/// baseline, general for the cascade's first stage).
inline EvalReport evaluate_flat(const Dataset& dataset, const std::vector<std::vector<Detection>>& detections,
                                double iou_threshold, LabelLevel level) {
  const auto match = match_dataset(dataset, detections, iou_threshold, level);
  const auto& tax = dataset.taxonomy;
  EvalReport r;
  const auto map = mean_average_precision(match, &tax);
  r.per_class_ap = map.per_class;
  r.map = map.value;
  r.matched_detections = count_matches(match).matched;
  r.classification_error = detail::error_or_none(match, level, tax);
  r.classification_error_general = detail::error_or_none(match, LabelLevel::General, tax);
  r.confusion = confusion_matrix(match, level, tax);
  r.confusion_general = confusion_matrix(match, LabelLevel::General, tax);
  r.stage1_inferences = dataset.images.size();
  return r;
}

/// Evaluates the cascade's final fine detections. Classification error and
/// confusion use every image; AP uses only images that are not stage-1 false
/// negatives, and the resulting mAP is then discounted by the FN images.
inline EvalReport evaluate_cascade(const Dataset& dataset, const CascadeOutput& cascade, double iou_threshold) {
  const auto& tax = dataset.taxonomy;
  const auto full = match_dataset(dataset, cascade.detections, iou_threshold, LabelLevel::Fine);
  const auto fn = false_negative_images(dataset, cascade.trace);
  std::vector<bool> reached(fn.size());
  std::size_t fn_count = 0;
  for (std::size_t i = 0; i < fn.size(); ++i) {
    reached[i] = !fn[i];
    fn_count += fn[i] ? 1 : 0;
  }
  const auto routed = match_dataset(dataset, cascade.detections, iou_threshold, LabelLevel::Fine, &reached);

  EvalReport r;
  const auto map = mean_average_precision(routed, &tax);
  r.per_class_ap = map.per_class;
  r.stage2_map = map.value;
  const std::size_t positives = dataset.positive_count();
  r.routed_positive_images = positives - fn_count;
  r.map = positives == 0 ? map.value : map_with_fn_accounting(map.value, positives - fn_count, fn_count);
  r.matched_detections = count_matches(full).matched;
  r.classification_error = detail::error_or_none(full, LabelLevel::Fine, tax);
  r.classification_error_general = detail::error_or_none(full, LabelLevel::General, tax);
  r.confusion = confusion_matrix(full, LabelLevel::Fine, tax);
  r.confusion_general = confusion_matrix(full, LabelLevel::General, tax);
  r.fn_image_count = fn_count;
  r.stage1_inferences = cascade.trace.stage1_inferences;
  r.stage2_inferences = cascade.trace.stage2_inferences;
  return r;
}

inline Json optional_json(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

inline Json confusion_to_json(const ConfusionMatrix& m) {
  Json j = Json::object();
  for (const auto& [truth, row] : m) {
    Json jr = Json::object();
    for (const auto& [pred, count] : row) jr[pred] = count;
    j[truth] = jr;
  }
  return j;
}

inline Json to_json(const EvalReport& r) {
  Json ap = Json::object();
  for (const auto& [label, v] : r.per_class_ap) ap[label] = v;
  Json j{{"per_class_ap", ap},
         {"map", r.map},
         {"classification_error", optional_json(r.classification_error)},
         {"classification_error_general", optional_json(r.classification_error_general)},
         {"matched_detections", r.matched_detections},
         {"confusion", confusion_to_json(r.confusion)},
         {"confusion_general", confusion_to_json(r.confusion_general)},
         {"fn_image_count", r.fn_image_count},
         {"inferences", {{"stage1", r.stage1_inferences}, {"stage2", r.stage2_inferences}}}};
  if (r.stage2_map) j["stage2_map"] = *r.stage2_map;
  if (r.routed_positive_images) j["routed_positive_images"] = *r.routed_positive_images;
  return j;
}

inline Json detection_to_json(const Detection& d) {
  return Json{{"label", d.label}, {"box", detail::box_to_json(d.box)}, {"confidence", d.confidence}};
}

inline Detection detection_from_json(const Json& j) {
  try {
    return Detection{detail::box_from_json(j.at("box"), "trace"), j.at("label").get<std::string>(),
                     j.at("confidence").get<double>()};
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("trace detection: ") + e.what());
  }
}

inline Json detections_to_json(const std::vector<Detection>& dets) {
  Json j = Json::array();
  for (const auto& d : dets) j.push_back(detection_to_json(d));
  return j;
}

inline std::vector<Detection> detections_from_json(const Json& j) {
  std::vector<Detection> out;
  for (const auto& d : j) out.push_back(detection_from_json(d));
  return out;
}

/// Full per-image routing record; enough to recompute every report number.
inline Json trace_to_json(const Dataset& dataset, const RoutingTrace& trace) {
  Json images = Json::array();
  for (std::size_t i = 0; i < trace.images.size(); ++i) {
    const auto& t = trace.images[i];
    Json stage2 = Json::array();
    for (const auto& [g, dets] : t.stage2) stage2.push_back(Json{{"network", g}, {"detections", detections_to_json(dets)}});
    images.push_back(Json{{"id", dataset.images[i].id},
                          {"stage1", detections_to_json(t.stage1)},
                          {"triggered", t.triggered},
                          {"invoked", t.invoked},
                          {"stage2", stage2}});
  }
  return Json{{"stage1_inferences", trace.stage1_inferences},
              {"stage2_inferences", trace.stage2_inferences},
              {"images", images}};
}

/// Rebuilds the cascade output (final detections in invocation order) from a serialized trace.
inline CascadeOutput cascade_from_trace_json(const Dataset& dataset, const Json& j) {
  CascadeOutput out;
  try {
    const auto& images = j.at("images");
    if (images.size() != dataset.images.size()) throw ValidationError("trace does not match the dataset");
    for (std::size_t i = 0; i < images.size(); ++i) {
      const auto& ji = images[i];
      if (ji.at("id").get<std::string>() != dataset.images[i].id) throw ValidationError("trace image order differs");
      ImageTrace t;
      t.stage1 = detections_from_json(ji.at("stage1"));
      t.triggered = ji.at("triggered").get<std::vector<Label>>();
      t.invoked = ji.at("invoked").get<std::vector<Label>>();
      std::vector<Detection> final_dets;
      for (const auto& js : ji.at("stage2")) {
        auto dets = detections_from_json(js.at("detections"));
        final_dets.insert(final_dets.end(), dets.begin(), dets.end());
        t.stage2.emplace_back(js.at("network").get<std::string>(), std::move(dets));
      }
      out.detections.push_back(std::move(final_dets));
      out.trace.images.push_back(std::move(t));
    }
    out.trace.stage1_inferences = j.at("stage1_inferences").get<std::size_t>();
    out.trace.stage2_inferences = j.at("stage2_inferences").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("trace: ") + e.what());
  }
  return out;
}

}  // namespace modcascade
