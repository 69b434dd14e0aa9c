#pragma once

#include <algorithm>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "modcascade/dataset.hpp"
#include "modcascade/taxonomy.hpp"

namespace modcascade {

inline constexpr const char* kMissColumn = "MISS";

inline double iou(const BoundingBox& a, const BoundingBox& b) {
  const double ix = std::max(0.0, std::min(a.right(), b.right()) - std::max(a.x, b.x));
  const double iy = std::max(0.0, std::min(a.bottom(), b.bottom()) - std::max(a.y, b.y));
  const double inter = ix * iy;
  if (inter <= 0) return 0.0;
  const double uni = a.area() + b.area() - inter;
  return std::clamp(inter / uni, 0.0, 1.0);
}

struct MatchedDetection {
  Detection detection;
  std::optional<std::size_t> gt;  // index into the image's ground truths
  bool correct_label = false;
};

/// Matching for one image. Detections keep their input order.
struct ImageMatch {
  std::vector<MatchedDetection> detections;
  std::vector<Label> gt_labels;            // fine labels of the ground truths
  std::vector<std::size_t> unmatched_gts;  // false negatives
};

struct MatchResult {
  std::vector<ImageMatch> images;
  double iou_threshold = 0.5;
  LabelLevel level = LabelLevel::Fine;
};

/// Class-agnostic greedy matching: detections in descending confidence
/// (ties by input order) each claim the unclaimed ground truth of highest IoU
/// at or above the threshold. Label agreement is judged at `level`; the
/// taxonomy is needed only for LabelLevel::General.
inline ImageMatch match_detections(std::span<const Detection> dets, std::span<const GroundTruthObject> gts,
                                   double iou_threshold, LabelLevel level = LabelLevel::Fine,
                                   const ClassTaxonomy* taxonomy = nullptr) {
  if (!(iou_threshold > 0.0 && iou_threshold <= 1.0)) throw DomainError("iou_threshold must lie in (0,1]");
  if (level == LabelLevel::General && taxonomy == nullptr) throw DomainError("general-level matching needs a taxonomy");

  ImageMatch out;
  out.detections.reserve(dets.size());
  for (const auto& d : dets) out.detections.push_back({d, std::nullopt, false});
  for (const auto& g : gts) out.gt_labels.push_back(g.fine_label);

  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return dets[a].confidence > dets[b].confidence; });

  std::vector<bool> claimed(gts.size(), false);
  for (const auto di : order) {
    double best = -1;
    std::optional<std::size_t> best_gt;
    for (std::size_t gi = 0; gi < gts.size(); ++gi) {
      if (claimed[gi]) continue;
      const double overlap = iou(dets[di].box, gts[gi].box);
      if (overlap >= iou_threshold && overlap > best) {
        best = overlap;
        best_gt = gi;
      }
    }
    if (!best_gt) continue;
    claimed[*best_gt] = true;
    auto& m = out.detections[di];
    m.gt = best_gt;
    if (level == LabelLevel::Fine) {
      m.correct_label = dets[di].label == gts[*best_gt].fine_label;
    } else {
      m.correct_label = project_label(*taxonomy, dets[di].label, level) ==
                        project_label(*taxonomy, gts[*best_gt].fine_label, level);
    }
  }
  for (std::size_t gi = 0; gi < gts.size(); ++gi) {
    if (!claimed[gi]) out.unmatched_gts.push_back(gi);
  }
  return out;
}

/// Matches every image of the dataset. `include` optionally restricts which
/// images take part.
inline MatchResult match_dataset(const Dataset& dataset, const std::vector<std::vector<Detection>>& detections,
                                 double iou_threshold, LabelLevel level = LabelLevel::Fine,
                                 const std::vector<bool>* include = nullptr) {
  if (detections.size() != dataset.images.size()) throw DomainError("one detection list per image is required");
  MatchResult out;
  out.iou_threshold = iou_threshold;
  out.level = level;
  for (std::size_t i = 0; i < dataset.images.size(); ++i) {
    if (include != nullptr && !(*include)[i]) continue;
    out.images.push_back(match_detections(detections[i], dataset.images[i].objects, iou_threshold, level,
                                          &dataset.taxonomy));
  }
  return out;
}

namespace detail {

inline Label level_label(const ClassTaxonomy* taxonomy, const Label& label, LabelLevel level) {
  return level == LabelLevel::Fine ? label : project_label(*taxonomy, label, level);
}

}  // namespace detail

/// All-points interpolated AP for one class. A detection of the class counts
/// as a true positive only when it is matched and its label is correct.
/// Accumulation is done in long double so small fixtures come out exact.
inline double average_precision(const Label& cls, const MatchResult& match, const ClassTaxonomy* taxonomy = nullptr) {
  if (match.level == LabelLevel::General && taxonomy == nullptr) {
    throw DomainError("general-level AP needs a taxonomy");
  }
  std::size_t positives = 0;
  struct Ranked {
    double confidence;
    bool tp;
  };
  std::vector<Ranked> ranked;
  for (const auto& img : match.images) {
    for (const auto& l : img.gt_labels) positives += detail::level_label(taxonomy, l, match.level) == cls ? 1 : 0;
    for (const auto& m : img.detections) {
      if (detail::level_label(taxonomy, m.detection.label, match.level) != cls) continue;
      ranked.push_back({m.detection.confidence, m.gt.has_value() && m.correct_label});
    }
  }
  if (positives == 0) throw DomainError("no ground truth for class '" + cls + "'");
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const Ranked& a, const Ranked& b) { return a.confidence > b.confidence; });

  std::vector<long double> precision(ranked.size());
  std::size_t tp = 0;
  for (std::size_t k = 0; k < ranked.size(); ++k) {
    tp += ranked[k].tp ? 1 : 0;
    precision[k] = static_cast<long double>(tp) / static_cast<long double>(k + 1);
  }
  for (std::size_t k = ranked.size(); k-- > 1;) precision[k - 1] = std::max(precision[k - 1], precision[k]);

  long double area = 0;
  for (std::size_t k = 0; k < ranked.size(); ++k) {
    if (ranked[k].tp) area += precision[k];
  }
  return static_cast<double>(area / static_cast<long double>(positives));
}

struct MeanAveragePrecision {
  std::map<Label, double> per_class;
  double value = 0;
};

/// Mean AP over classes with at least one ground truth at the match level.
inline MeanAveragePrecision mean_average_precision(const MatchResult& match, const ClassTaxonomy* taxonomy = nullptr) {
  std::set<Label> classes;
  for (const auto& img : match.images) {
    for (const auto& l : img.gt_labels) classes.insert(detail::level_label(taxonomy, l, match.level));
  }
  MeanAveragePrecision out;
  if (classes.empty()) return out;
  long double sum = 0;
  for (const auto& c : classes) {
    const double ap = average_precision(c, match, taxonomy);
    out.per_class.emplace(c, ap);
    sum += ap;
  }
  out.value = static_cast<double>(sum / static_cast<long double>(classes.size()));
  return out;
}

/// Modular mAP where every stage-1 false-negative image adds a zero term with
/// weight 1/(positive inference images). Only positive images enter the
/// denominator.
inline double map_with_fn_accounting(double stage2_map, std::size_t routed_positive_images, std::size_t fn_images) {
  const std::size_t total = routed_positive_images + fn_images;
  if (total == 0) throw DomainError("FN accounting needs at least one positive image");
  if (!(stage2_map >= 0.0 && stage2_map <= 1.0)) throw DomainError("stage-2 mAP must lie in [0,1]");
  if (fn_images == 0) return stage2_map;
  return stage2_map * static_cast<double>(routed_positive_images) / static_cast<double>(total);
}

struct MatchCounts {
  std::size_t matched = 0;
  std::size_t wrong = 0;
};

inline MatchCounts count_matches(const MatchResult& match, std::optional<LabelLevel> level = std::nullopt,
                                 const ClassTaxonomy* taxonomy = nullptr) {
  MatchCounts c;
  for (const auto& img : match.images) {
    for (const auto& m : img.detections) {
      if (!m.gt) continue;
      ++c.matched;
      bool correct = m.correct_label;
      if (level) {
        if (*level == LabelLevel::General && taxonomy == nullptr) throw DomainError("projection needs a taxonomy");
        correct = detail::level_label(taxonomy, m.detection.label, *level) ==
                  detail::level_label(taxonomy, img.gt_labels[*m.gt], *level);
      }
      c.wrong += correct ? 0 : 1;
    }
  }
  return c;
}

/// Fraction of matched (correctly localized) detections with a wrong label.
inline double classification_error(const MatchResult& match) {
  const auto c = count_matches(match);
  if (c.matched == 0) throw DomainError("classification error needs at least one matched detection");
  return static_cast<double>(c.wrong) / static_cast<double>(c.matched);
}

/// Same, with labels re-judged at `level`.
inline double classification_error(const MatchResult& match, LabelLevel level, const ClassTaxonomy& taxonomy) {
  const auto c = count_matches(match, level, &taxonomy);
  if (c.matched == 0) throw DomainError("classification error needs at least one matched detection");
  return static_cast<double>(c.wrong) / static_cast<double>(c.matched);
}

using ConfusionMatrix = std::map<Label, std::map<Label, std::size_t>>;

/// Counts (true, predicted) over matched detections; unmatched ground truths
/// go to the MISS column.
inline ConfusionMatrix confusion_matrix(const MatchResult& match, LabelLevel level, const ClassTaxonomy& taxonomy) {
  const auto lift = [&](const Label& l) {
    if (level == LabelLevel::General) return project_label(taxonomy, l, level);
    if (!taxonomy.is_fine(l) && !taxonomy.is_general(l)) throw UnknownLabelError(l);
    return l;
  };
  ConfusionMatrix out;
  for (const auto& img : match.images) {
    for (const auto& m : img.detections) {
      if (!m.gt) continue;
      ++out[lift(img.gt_labels[*m.gt])][lift(m.detection.label)];
    }
    for (const auto gi : img.unmatched_gts) ++out[lift(img.gt_labels[gi])][kMissColumn];
  }
  return out;
}

}  // namespace modcascade

namespace modcascade {

struct PrPoint {
  std::size_t rank = 0;
  double confidence = 0;
  double precision = 0;
  double recall = 0;
};

/// Raw (non-interpolated) precision/recall after each ranked detection of a class.
inline std::vector<PrPoint> precision_recall_curve(const Label& cls, const MatchResult& match,
                                                   const ClassTaxonomy* taxonomy = nullptr) {
  std::size_t positives = 0;
  std::vector<std::pair<double, bool>> ranked;
  for (const auto& img : match.images) {
    for (const auto& l : img.gt_labels) positives += detail::level_label(taxonomy, l, match.level) == cls ? 1 : 0;
    for (const auto& m : img.detections) {
      if (detail::level_label(taxonomy, m.detection.label, match.level) != cls) continue;
      ranked.emplace_back(m.detection.confidence, m.gt.has_value() && m.correct_label);
    }
  }
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  std::vector<PrPoint> out;
  std::size_t tp = 0;
  for (std::size_t k = 0; k < ranked.size(); ++k) {
    tp += ranked[k].second ? 1 : 0;
    out.push_back({k + 1, ranked[k].first, static_cast<double>(tp) / static_cast<double>(k + 1),
                   positives == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(positives)});
  }
  return out;
}

}  // namespace modcascade
