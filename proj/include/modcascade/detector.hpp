#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include <boost/random/beta_distribution.hpp>
#include <boost/random/normal_distribution.hpp>
#include <boost/random/uniform_real_distribution.hpp>

#include "modcascade/dataset.hpp"
#include "modcascade/external_detector.hpp"
#include "modcascade/random.hpp"
#include "modcascade/taxonomy.hpp"

namespace modcascade {

inline constexpr double kStochasticTolerance = 1e-9;

/// Confidence is Beta distributed with the given mean and standard deviation,
/// conditioned on whether the emitted label is the true one.
struct ConfidenceLaw {
  double mean_correct = 0.9;
  double mean_wrong = 0.6;
  double spread = 0.05;

  friend bool operator==(const ConfidenceLaw&, const ConfidenceLaw&) = default;
};

/// Generative parameters of a simulated detector. Each confusion row maps a
/// true label to emission probabilities; whatever mass is missing is MISS.
struct DetectorProfile {
  std::vector<Label> label_space;
  std::map<Label, std::map<Label, double>> confusion;
  double negative_fp_rate = 0;
  std::map<Label, double> fp_label_weights;  // empty means uniform over label_space
  double loc_noise_sigma = 0;
  ConfidenceLaw confidence;

  double miss_probability(const Label& true_label) const {
    const auto it = confusion.find(true_label);
    if (it == confusion.end()) return 1.0;
    double emitted = 0;
    for (const auto& [label, p] : it->second) emitted += p;
    return std::max(0.0, 1.0 - emitted);
  }

  friend bool operator==(const DetectorProfile&, const DetectorProfile&) = default;
};

namespace detail {

inline bool valid_law_component(double mean, double spread) {
  if (!(mean >= 0.0 && mean <= 1.0)) return false;
  if (spread == 0.0 || mean == 0.0 || mean == 1.0) return true;
  return spread * spread < mean * (1.0 - mean);
}

}  // namespace detail

inline std::vector<std::string> validate_profile(const DetectorProfile& p) {
  std::vector<std::string> errors;
  std::set<Label> space;
  for (const auto& l : p.label_space) {
    if (!space.insert(l).second) errors.push_back("duplicate label in label_space: " + l);
  }
  for (const auto& [truth, row] : p.confusion) {
    double sum = 0;
    for (const auto& [label, prob] : row) {
      if (space.count(label) == 0) errors.push_back("row " + truth + " emits label outside label_space: " + label);
      if (!(prob >= 0.0 && prob <= 1.0)) errors.push_back("row " + truth + " has probability outside [0,1]");
      sum += prob;
    }
    if (sum > 1.0 + kStochasticTolerance) errors.push_back("row " + truth + " sums to more than 1");
  }
  if (!(p.negative_fp_rate >= 0.0 && p.negative_fp_rate <= 1.0)) errors.emplace_back("negative_fp_rate outside [0,1]");
  if (p.negative_fp_rate > 0 && p.label_space.empty()) errors.emplace_back("false positives need a label space");
  double weight_sum = 0;
  for (const auto& [label, w] : p.fp_label_weights) {
    if (space.count(label) == 0) errors.push_back("fp weight for label outside label_space: " + label);
    if (!(w >= 0.0 && std::isfinite(w))) errors.push_back("fp weight must be non-negative: " + label);
    weight_sum += w;
  }
  if (!p.fp_label_weights.empty() && !(weight_sum > 0)) errors.emplace_back("fp weights sum to zero");
  if (!(p.loc_noise_sigma >= 0.0 && std::isfinite(p.loc_noise_sigma))) errors.emplace_back("loc_noise_sigma must be >= 0");
  const auto& law = p.confidence;
  if (!(law.spread >= 0.0) || !detail::valid_law_component(law.mean_correct, law.spread) ||
      !detail::valid_law_component(law.mean_wrong, law.spread)) {
    errors.emplace_back("confidence law needs means in [0,1] and spread^2 < mean*(1-mean)");
  }
  return errors;
}

inline void check_profile(const DetectorProfile& p, const std::string& name) {
  const auto errors = validate_profile(p);
  if (!errors.empty()) throw ValidationError("detector profile " + name + ": " + errors.front());
}

namespace detail {

inline double draw_confidence(Engine& rng, const ConfidenceLaw& law, bool correct) {
  const double mean = correct ? law.mean_correct : law.mean_wrong;
  if (law.spread == 0.0 || mean == 0.0 || mean == 1.0) return mean;
  const double concentration = mean * (1.0 - mean) / (law.spread * law.spread) - 1.0;
  boost::random::beta_distribution<double> beta(mean * concentration, (1.0 - mean) * concentration);
  return std::clamp(beta(rng), 0.0, 1.0);
}

/// Clamps a noisy box into the image keeping at least a one pixel extent.
inline BoundingBox clamp_box(double x, double y, double w, double h, double width, double height) {
  const auto axis = [](double lo, double extent, double limit) {
    const double min_extent = std::min(1.0, limit);
    double a = std::clamp(lo, 0.0, limit);
    double b = std::clamp(lo + extent, 0.0, limit);
    if (b - a < min_extent) {
      if (a + min_extent <= limit) {
        b = a + min_extent;
      } else {
        a = limit - min_extent;
        b = limit;
      }
    }
    return std::pair{a, b - a};
  };
  const auto [bx, bw] = axis(x, w, width);
  const auto [by, bh] = axis(y, h, height);
  return {bx, by, bw, bh};
}

}  // namespace detail

/// Statistical stand-in for a trained detector. Output is a pure function of
/// (profile, seed, image): each object draws from its own stream keyed by
/// (seed, image id, object index).
class SimulatedDetector {
 public:
  static constexpr std::uint64_t kBackgroundSlot = std::numeric_limits<std::uint64_t>::max();

  SimulatedDetector(DetectorProfile profile, std::uint64_t seed, std::optional<ClassTaxonomy> taxonomy = std::nullopt)
      : profile_(std::move(profile)), seed_(seed), taxonomy_(std::move(taxonomy)) {
    check_profile(profile_, "simulated");
  }

  const DetectorProfile& profile() const noexcept { return profile_; }
  std::uint64_t seed() const noexcept { return seed_; }

  std::vector<Detection> detect(const AnnotatedImage& image) const {
    std::vector<Detection> out;
    for (std::size_t k = 0; k < image.objects.size(); ++k) {
      const auto& obj = image.objects[k];
      const auto row = row_for(obj.fine_label);
      if (!row) continue;
      Engine rng = stream_for(seed_, image.id, k);
      boost::random::uniform_real_distribution<double> unit(0.0, 1.0);
      const double u = unit(rng);
      const Label* emitted = nullptr;
      double cumulative = 0;
      for (const auto& label : profile_.label_space) {
        const auto it = row->probs->find(label);
        if (it == row->probs->end()) continue;
        cumulative += it->second;
        if (u < cumulative) {
          emitted = &label;
          break;
        }
      }
      if (emitted == nullptr) continue;  // MISS

      BoundingBox box = obj.box;
      if (profile_.loc_noise_sigma > 0) {
        boost::random::normal_distribution<double> noise(0.0, profile_.loc_noise_sigma);
        const double dx = noise(rng);
        const double dy = noise(rng);
        const double dw = noise(rng);
        const double dh = noise(rng);
        box = detail::clamp_box(box.x + dx, box.y + dy, box.w + dw, box.h + dh, image.width, image.height);
      }
      const bool correct = *emitted == row->correct;
      out.push_back(Detection{box, *emitted, detail::draw_confidence(rng, profile_.confidence, correct)});
    }
    if (image.negative() && profile_.negative_fp_rate > 0) {
      Engine rng = stream_for(seed_, image.id, kBackgroundSlot);
      boost::random::uniform_real_distribution<double> unit(0.0, 1.0);
      if (unit(rng) < profile_.negative_fp_rate) out.push_back(spurious(rng, image));
    }
    return out;
  }

 private:
  struct RowRef {
    const std::map<Label, double>* probs;
    Label correct;
  };

  /// Exact row for the true label, else the row of its general class when a
  /// taxonomy is attached.
  std::optional<RowRef> row_for(const Label& truth) const {
    if (const auto it = profile_.confusion.find(truth); it != profile_.confusion.end()) {
      return RowRef{&it->second, truth};
    }
    if (taxonomy_ && taxonomy_->is_fine(truth)) {
      Label general = general_of(*taxonomy_, truth);
      if (const auto it = profile_.confusion.find(general); it != profile_.confusion.end()) {
        return RowRef{&it->second, std::move(general)};
      }
    }
    return std::nullopt;
  }

  Detection spurious(Engine& rng, const AnnotatedImage& image) const {
    boost::random::uniform_real_distribution<double> unit(0.0, 1.0);
    double total = 0;
    for (const auto& l : profile_.label_space) total += fp_weight(l);
    const double target = unit(rng) * total;
    const Label* label = &profile_.label_space.back();
    double cumulative = 0;
    for (const auto& l : profile_.label_space) {
      cumulative += fp_weight(l);
      if (target < cumulative) {
        label = &l;
        break;
      }
    }
    const double w = image.width * (0.05 + 0.45 * unit(rng));
    const double h = image.height * (0.05 + 0.45 * unit(rng));
    const double x = (image.width - w) * unit(rng);
    const double y = (image.height - h) * unit(rng);
    const BoundingBox box = detail::clamp_box(x, y, w, h, image.width, image.height);
    return Detection{box, *label, detail::draw_confidence(rng, profile_.confidence, false)};
  }

  double fp_weight(const Label& l) const {
    if (profile_.fp_label_weights.empty()) return 1.0;
    const auto it = profile_.fp_label_weights.find(l);
    return it == profile_.fp_label_weights.end() ? 0.0 : it->second;
  }

  DetectorProfile profile_;
  std::uint64_t seed_ = 0;
  std::optional<ClassTaxonomy> taxonomy_;
};

/// Either a simulated detector or a handle to an external process.
class DetectorHandle {
 public:
  enum class Kind { Simulated, External };

  static DetectorHandle simulated(DetectorProfile profile, std::uint64_t seed,
                                  std::optional<ClassTaxonomy> taxonomy = std::nullopt) {
    return DetectorHandle(SimulatedDetector(std::move(profile), seed, std::move(taxonomy)));
  }

  static DetectorHandle external(const std::string& command, std::string path_prefix = {}) {
    return DetectorHandle(ExternalDetector(command, std::move(path_prefix)));
  }

  Kind kind() const noexcept { return impl_.index() == 0 ? Kind::Simulated : Kind::External; }

  const SimulatedDetector* as_simulated() const noexcept { return std::get_if<SimulatedDetector>(&impl_); }

  std::vector<Detection> detect(const AnnotatedImage& image) const {
    return std::visit([&](const auto& d) { return d.detect(image); }, impl_);
  }

 private:
  explicit DetectorHandle(SimulatedDetector d) : impl_(std::move(d)) {}
  explicit DetectorHandle(ExternalDetector d) : impl_(std::move(d)) {}

  std::variant<SimulatedDetector, ExternalDetector> impl_;
};

inline std::vector<Detection> detect(const DetectorHandle& handle, const AnnotatedImage& image) {
  return handle.detect(image);
}

/// Collapses a fine-label profile onto general classes. Each general row is the
/// mean of its members' projected rows, so within-general confusion lands on
/// the diagonal.
inline DetectorProfile derive_general_profile(const DetectorProfile& fine, const ClassTaxonomy& taxonomy) {
  for (const auto& l : fine.label_space) {
    if (!taxonomy.is_fine(l)) throw UnknownLabelError(l);
  }
  std::set<Label> emitted_generals;
  for (const auto& l : fine.label_space) emitted_generals.insert(general_of(taxonomy, l));

  DetectorProfile out;
  for (const auto& g : taxonomy.generals()) {
    if (emitted_generals.count(g) != 0) out.label_space.push_back(g);
  }

  std::map<Label, std::vector<const std::map<Label, double>*>> members;
  for (const auto& [truth, row] : fine.confusion) {
    if (!taxonomy.is_fine(truth)) throw UnknownLabelError(truth);
    members[general_of(taxonomy, truth)].push_back(&row);
  }
  for (const auto& [general, rows] : members) {
    std::map<Label, double> projected;
    const double share = 1.0 / static_cast<double>(rows.size());
    for (const auto* row : rows) {
      for (const auto& [label, p] : *row) projected[general_of(taxonomy, label)] += share * p;
    }
    out.confusion.emplace(general, std::move(projected));
  }

  out.negative_fp_rate = fine.negative_fp_rate;
  for (const auto& [label, w] : fine.fp_label_weights) out.fp_label_weights[general_of(taxonomy, label)] += w;
  out.loc_noise_sigma = fine.loc_noise_sigma;
  out.confidence = fine.confidence;
  return out;
}

enum class ErrorSpread {
  Siblings,  // wrong labels stay inside the true label's general class when possible
  Uniform,
};

/// Parametric profile with a fixed per-object error rate. `error` is the
/// fraction of emitted detections with a wrong label; `miss` is the
/// probability of emitting nothing. True labels outside the label space
/// (foreign objects) are detected with probability `foreign_detect` under a
/// uniformly chosen label of the space.
struct PresetSpec {
  double error = 0;
  double miss = 0;
  ErrorSpread spread = ErrorSpread::Siblings;
  double foreign_detect = 1.0;
};

/// Builds confusion rows for every fine label of the taxonomy.
inline DetectorProfile make_preset_profile(const ClassTaxonomy& taxonomy, std::vector<Label> label_space,
                                           const PresetSpec& spec) {
  if (!(spec.error >= 0 && spec.error <= 1 && spec.miss >= 0 && spec.miss <= 1 && spec.foreign_detect >= 0 &&
        spec.foreign_detect <= 1)) {
    throw ValidationError("preset rates must lie in [0,1]");
  }
  if (label_space.empty()) throw ValidationError("preset needs a non-empty label space");
  DetectorProfile p;
  p.label_space = std::move(label_space);
  const std::set<Label> space(p.label_space.begin(), p.label_space.end());
  const double emit = 1.0 - spec.miss;

  const auto group_of = [&](const Label& l) {
    return taxonomy.is_fine(l) ? general_of(taxonomy, l) : l;
  };

  for (const auto& truth : taxonomy.fine_labels()) {
    Label correct;
    if (space.count(truth) != 0) {
      correct = truth;
    } else if (space.count(general_of(taxonomy, truth)) != 0) {
      correct = general_of(taxonomy, truth);
    }
    std::map<Label, double> row;
    if (correct.empty()) {
      const double each = emit * spec.foreign_detect / static_cast<double>(p.label_space.size());
      if (each > 0) {
        for (const auto& l : p.label_space) row[l] = each;
      }
      p.confusion.emplace(truth, std::move(row));
      continue;
    }
    std::vector<Label> wrong;
    if (spec.spread == ErrorSpread::Siblings) {
      for (const auto& l : p.label_space) {
        if (l != correct && group_of(l) == group_of(correct)) wrong.push_back(l);
      }
    }
    if (wrong.empty()) {
      for (const auto& l : p.label_space) {
        if (l != correct) wrong.push_back(l);
      }
    }
    const double error = wrong.empty() ? 0.0 : spec.error;
    row[correct] = emit * (1.0 - error);
    for (const auto& l : wrong) {
      if (error > 0) row[l] = emit * error / static_cast<double>(wrong.size());
    }
    p.confusion.emplace(truth, std::move(row));
  }
  return p;
}

inline DetectorProfile profile_from_json(const Json& j, const std::string& name) {
  DetectorProfile p;
  try {
    if (j.contains("label_space")) p.label_space = j.at("label_space").get<std::vector<Label>>();
    if (j.contains("confusion")) {
      for (const auto& [truth, row] : j.at("confusion").items()) {
        auto& out = p.confusion[truth];
        for (const auto& [label, prob] : row.items()) {
          if (label == "MISS") continue;
          out[label] = prob.get<double>();
        }
      }
    }
    p.negative_fp_rate = j.value("negative_fp_rate", 0.0);
    if (j.contains("fp_label_weights")) {
      for (const auto& [label, w] : j.at("fp_label_weights").items()) p.fp_label_weights[label] = w.get<double>();
    }
    p.loc_noise_sigma = j.value("loc_noise_sigma", 0.0);
    if (j.contains("confidence")) {
      const auto& c = j.at("confidence");
      p.confidence.mean_correct = c.value("mean_correct", p.confidence.mean_correct);
      p.confidence.mean_wrong = c.value("mean_wrong", p.confidence.mean_wrong);
      p.confidence.spread = c.value("spread", p.confidence.spread);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("detector profile " + name + ": " + e.what());
  }
  check_profile(p, name);
  return p;
}

inline Json profile_to_json(const DetectorProfile& p) {
  Json confusion = Json::object();
  for (const auto& [truth, row] : p.confusion) {
    Json jr = Json::object();
    for (const auto& [label, prob] : row) jr[label] = prob;
    confusion[truth] = jr;
  }
  Json j{{"label_space", p.label_space},
         {"confusion", confusion},
         {"negative_fp_rate", p.negative_fp_rate},
         {"loc_noise_sigma", p.loc_noise_sigma},
         {"confidence",
          {{"mean_correct", p.confidence.mean_correct},
           {"mean_wrong", p.confidence.mean_wrong},
           {"spread", p.confidence.spread}}}};
  if (!p.fp_label_weights.empty()) {
    Json w = Json::object();
    for (const auto& [label, v] : p.fp_label_weights) w[label] = v;
    j["fp_label_weights"] = w;
  }
  return j;
}

}  // namespace modcascade
