#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "modcascade/error.hpp"
#include "modcascade/json_io.hpp"
#include "modcascade/taxonomy.hpp"

namespace modcascade {

/// Discrete class-conditional feature activation model. Row c of
/// `conditionals` is P(x_i | class c) over the feature axis; `weights` holds
/// the per-feature significance w_i(c).
struct FeatureClassModel {
  std::vector<Label> classes;
  std::vector<double> priors;
  std::vector<std::vector<double>> conditionals;
  std::vector<std::vector<double>> weights;

  std::size_t n_features() const noexcept { return conditionals.empty() ? 0 : conditionals.front().size(); }

  std::size_t class_index(const Label& label) const {
    const auto it = std::find(classes.begin(), classes.end(), label);
    if (it == classes.end()) throw UnknownLabelError(label);
    return static_cast<std::size_t>(it - classes.begin());
  }

  friend bool operator==(const FeatureClassModel&, const FeatureClassModel&) = default;
};

inline constexpr double kProbabilityTolerance = 1e-9;

inline std::vector<std::string> validate_model(const FeatureClassModel& m) {
  std::vector<std::string> errors;
  const std::size_t k = m.classes.size();
  if (k == 0) errors.emplace_back("model has no classes");
  if (m.priors.size() != k || m.conditionals.size() != k || m.weights.size() != k) {
    errors.emplace_back("priors, conditionals and weights need one entry per class");
    return errors;
  }
  std::set<Label> seen;
  for (const auto& c : m.classes) {
    if (!seen.insert(c).second) errors.push_back("duplicate class " + c);
  }
  double prior_sum = 0;
  for (const double p : m.priors) {
    if (!(p >= 0 && p <= 1)) errors.emplace_back("prior outside [0,1]");
    prior_sum += p;
  }
  if (std::abs(prior_sum - 1.0) > kProbabilityTolerance) errors.emplace_back("priors do not sum to 1");
  const std::size_t nf = m.n_features();
  if (nf == 0) errors.emplace_back("model has no features");
  for (std::size_t c = 0; c < k; ++c) {
    if (m.conditionals[c].size() != nf || m.weights[c].size() != nf) {
      errors.push_back("class " + m.classes[c] + ": feature vectors have inconsistent length");
      continue;
    }
    double sum = 0;
    for (const double p : m.conditionals[c]) {
      if (!(p >= 0)) errors.push_back("class " + m.classes[c] + ": negative conditional");
      sum += p;
    }
    if (std::abs(sum - 1.0) > kProbabilityTolerance) {
      errors.push_back("class " + m.classes[c] + ": conditionals do not sum to 1");
    }
    for (const double w : m.weights[c]) {
      if (!(w >= 0 && w <= 1)) errors.push_back("class " + m.classes[c] + ": weight outside [0,1]");
    }
  }
  return errors;
}

inline void check_model(const FeatureClassModel& m) {
  const auto errors = validate_model(m);
  if (!errors.empty()) throw ValidationError("feature model: " + errors.front());
}

struct CurveRow {
  std::size_t feature = 0;
  double weighted_c0 = 0;
  double weighted_c1 = 0;
  double min_term = 0;
};

/// Per-feature weighted densities P(x_i|C)P(C)w_i(C) of a class pair and their minimum.
inline std::vector<CurveRow> pdf_curves(const FeatureClassModel& m, const Label& c0, const Label& c1) {
  const std::size_t a = m.class_index(c0);
  const std::size_t b = m.class_index(c1);
  std::vector<CurveRow> rows(m.n_features());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const double t0 = m.conditionals[a][i] * m.priors[a] * m.weights[a][i];
    const double t1 = m.conditionals[b][i] * m.priors[b] * m.weights[b][i];
    rows[i] = {i, t0, t1, std::min(t0, t1)};
  }
  return rows;
}

/// Weighted Bayes error of a class pair: the sum over features of the smaller
/// weighted density. Summed in feature order.
inline double bayes_error(const FeatureClassModel& m, const Label& c0, const Label& c1) {
  if (c0 == c1) throw DomainError("bayes_error needs two distinct classes");
  double sum = 0;
  for (const auto& row : pdf_curves(m, c0, c1)) sum += row.min_term;
  return sum;
}

enum class WeightMerge {
  MassWeighted,  // w_i(g) = sum_m P(x_i|m)P(m)w_i(m) / sum_m P(x_i|m)P(m)
  Max,           // w_i(g) = max_m w_i(m)
};

/// Replaces `members` by their union `general`. The merged conditional is the
/// prior-weighted mixture of the members. With MassWeighted weights the
/// merged weighted density equals the sum of the members' densities.
inline FeatureClassModel merge_general(const FeatureClassModel& m, const std::vector<Label>& members,
                                       const Label& general, WeightMerge rule = WeightMerge::MassWeighted) {
  const std::set<Label> member_set(members.begin(), members.end());
  if (member_set.size() < 2) throw DomainError("merge_general needs at least two distinct members");
  std::vector<std::size_t> idx;
  for (const auto& l : members) idx.push_back(m.class_index(l));
  if (member_set.count(general) == 0 && std::find(m.classes.begin(), m.classes.end(), general) != m.classes.end()) {
    throw DomainError("merged label '" + general + "' collides with an existing class");
  }
  double prior = 0;
  for (const auto i : idx) prior += m.priors[i];
  if (!(prior > 0)) throw DomainError("merged classes have zero total prior");

  const std::size_t nf = m.n_features();
  std::vector<double> cond(nf, 0.0);
  std::vector<double> weight(nf, 0.0);
  for (std::size_t f = 0; f < nf; ++f) {
    double mass = 0;
    double weighted = 0;
    double wmax = 0;
    for (const auto i : idx) {
      const double joint = m.conditionals[i][f] * m.priors[i];
      mass += joint;
      weighted += joint * m.weights[i][f];
      wmax = std::max(wmax, m.weights[i][f]);
    }
    cond[f] = mass / prior;
    if (rule == WeightMerge::Max || !(mass > 0)) {
      weight[f] = wmax;
    } else {
      weight[f] = std::clamp(weighted / mass, 0.0, 1.0);
    }
  }

  FeatureClassModel out;
  bool placed = false;
  for (std::size_t c = 0; c < m.classes.size(); ++c) {
    if (member_set.count(m.classes[c]) != 0) {
      if (placed) continue;
      placed = true;
      out.classes.push_back(general);
      out.priors.push_back(prior);
      out.conditionals.push_back(cond);
      out.weights.push_back(weight);
      continue;
    }
    out.classes.push_back(m.classes[c]);
    out.priors.push_back(m.priors[c]);
    out.conditionals.push_back(m.conditionals[c]);
    out.weights.push_back(m.weights[c]);
  }
  return out;
}

/// Opaque capacity description. `sup_k` is supplied, never derived.
struct CapacityParams {
  double r = 1;
  double a_filters = 1;
  double d = 1;
  double h = 1;
  double q = 1;
  double sup_k = 1;
};

struct FeatureBudget {
  double transfer = 0;    // L: single-class features from transfer learning
  double fine_tuned = 0;  // T: single-class features from fine tuning
  double shared = 0;      // U: features common to several classes
  double n_classes = 1;   // n
  std::optional<CapacityParams> capacity;

  double total() const noexcept { return transfer + fine_tuned + shared; }
};

inline void check_budget(const FeatureBudget& b) {
  if (!(b.transfer >= 0 && b.fine_tuned >= 0 && b.shared >= 0)) throw ValidationError("feature counts must be >= 0");
  if (!(b.n_classes >= 1)) throw ValidationError("budget needs n >= 1");
  if (b.capacity) {
    const auto& c = *b.capacity;
    if (!(c.r > 0 && c.a_filters > 0 && c.d > 0 && c.h > 0 && c.q > 0 && c.sup_k > 0)) {
      throw ValidationError("capacity parameters must be positive");
    }
  }
}

/// Features available to one designated class: (L+T)/n + U.
inline double feature_count(const FeatureBudget& b) {
  if (!(b.n_classes >= 1)) throw DomainError("feature_count needs n >= 1");
  return (b.transfer + b.fine_tuned) / b.n_classes + b.shared;
}

/// True when N = L+T+U exceeds the supplied sup K; nullopt without capacity data.
inline std::optional<bool> over_capacity(const FeatureBudget& b) {
  if (!b.capacity) return std::nullopt;
  return b.total() > b.capacity->sup_k;
}

using Coordinate = std::pair<Eigen::Index, Eigen::Index>;

struct DeformationResult {
  bool holds_strictly = false;
  double lhs = 0;
  double rhs = 0;
};

/// Compares sum over G of |A|+|B| with sum over G of |A|. The inequality is
/// strict exactly when B has a non-zero entry in G; that test is made on the
/// entries directly so it does not depend on rounding of the sums.
inline DeformationResult deformation_check(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                                           std::span<const Coordinate> coords) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw DomainError("deformation_check: shape mismatch");
  DeformationResult out;
  for (const auto& [i, j] : coords) {
    if (i < 0 || j < 0 || i >= a.rows() || j >= a.cols()) throw DomainError("deformation_check: coordinate out of range");
    out.lhs += std::abs(a(i, j)) + std::abs(b(i, j));
    out.rhs += std::abs(a(i, j));
    if (b(i, j) != 0.0) out.holds_strictly = true;
  }
  return out;
}

struct AdvantageResult {
  bool advantage = false;
  double lhs = 0;
  double rhs = 0;
};

/// Whether a two-stage cascade beats a flat detector of accuracy `a` when its
/// stages improve accuracy by delta1 and delta2: a < (a+delta1)(a+delta2).
inline AdvantageResult modular_advantage(double a, double delta1, double delta2) {
  const auto in_unit = [](double v) { return v >= 0.0 && v <= 1.0; };
  if (!in_unit(a) || !in_unit(a + delta1) || !in_unit(a + delta2)) {
    throw DomainError("modular_advantage: accuracies must lie in [0,1]");
  }
  AdvantageResult out;
  out.lhs = a;
  out.rhs = (a + delta1) * (a + delta2);
  out.advantage = out.lhs < out.rhs;
  return out;
}

struct ModelFile {
  FeatureClassModel model;
  std::optional<FeatureBudget> budget;
};

/// Reads {priors, conditionals, weights?, budget?, capacity?}. Class order
/// follows the `priors` object; missing weights default to 1.
inline ModelFile model_from_json(const Json& j) {
  ModelFile out;
  try {
    if (!j.is_object() || !j.contains("priors") || !j["priors"].is_object()) {
      throw ValidationError("feature model: 'priors' must be an object");
    }
    if (!j.contains("conditionals") || !j["conditionals"].is_object()) {
      throw ValidationError("feature model: 'conditionals' must be an object");
    }
    auto& m = out.model;
    for (const auto& [label, prior] : j["priors"].items()) {
      m.classes.push_back(label);
      m.priors.push_back(prior.get<double>());
      if (!j["conditionals"].contains(label)) throw ValidationError("feature model: no conditionals for " + label);
      m.conditionals.push_back(j["conditionals"][label].get<std::vector<double>>());
      if (j.contains("weights") && j["weights"].contains(label)) {
        m.weights.push_back(j["weights"][label].get<std::vector<double>>());
      } else {
        m.weights.emplace_back(m.conditionals.back().size(), 1.0);
      }
    }
    if (j.contains("budget")) {
      const auto& jb = j["budget"];
      FeatureBudget b;
      b.transfer = jb.at("L").get<double>();
      b.fine_tuned = jb.at("T").get<double>();
      b.shared = jb.at("U").get<double>();
      b.n_classes = jb.at("n").get<double>();
      if (j.contains("capacity")) {
        const auto& jc = j["capacity"];
        b.capacity = CapacityParams{jc.at("r").get<double>(), jc.at("a_filters").get<double>(),
                                    jc.at("d").get<double>(),  jc.at("h").get<double>(),
                                    jc.at("q").get<double>(),  jc.at("supK").get<double>()};
      }
      check_budget(b);
      out.budget = b;
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("feature model: ") + e.what());
  }
  check_model(out.model);
  return out;
}

inline Json model_to_json(const ModelFile& file) {
  Json priors = Json::object();
  Json conditionals = Json::object();
  Json weights = Json::object();
  const auto& m = file.model;
  for (std::size_t c = 0; c < m.classes.size(); ++c) {
    priors[m.classes[c]] = m.priors[c];
    conditionals[m.classes[c]] = m.conditionals[c];
    weights[m.classes[c]] = m.weights[c];
  }
  Json j{{"priors", priors}, {"conditionals", conditionals}, {"weights", weights}};
  if (file.budget) {
    const auto& b = *file.budget;
    j["budget"] = {{"L", b.transfer}, {"T", b.fine_tuned}, {"U", b.shared}, {"n", b.n_classes}};
    if (b.capacity) {
      const auto& c = *b.capacity;
      j["capacity"] = {{"r", c.r}, {"a_filters", c.a_filters}, {"d", c.d}, {"h", c.h}, {"q", c.q}, {"supK", c.sup_k}};
    }
  }
  return j;
}

inline std::string curves_csv(const std::vector<CurveRow>& rows) {
  std::string out = "feature_index,w_density_c0,w_density_c1,min_term\n";
  for (const auto& r : rows) {
    out += std::to_string(r.feature) + "," + format_double17(r.weighted_c0) + "," + format_double17(r.weighted_c1) +
           "," + format_double17(r.min_term) + "\n";
  }
  return out;
}

}  // namespace modcascade
