#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "modcascade/error.hpp"

namespace modcascade {

using Label = std::string;

/// Two-level class tree: each general class unions an ordered list of
/// fine-grained classes. Construction never validates; call
/// validate_taxonomy() or ClassTaxonomy::checked() to enforce the partition.
class ClassTaxonomy {
 public:
  using Group = std::pair<Label, std::vector<Label>>;

  ClassTaxonomy() = default;

  ClassTaxonomy(std::vector<Group> groups, Label negative_label = "negative")
      : groups_(std::move(groups)), negative_label_(std::move(negative_label)) {
    for (const auto& [general, fines] : groups_) {
      for (const auto& fine : fines) general_index_.emplace(fine, general);
    }
  }

  /// Builds and throws ValidationError listing every violation.
  static ClassTaxonomy checked(std::vector<Group> groups, Label negative_label = "negative");

  const std::vector<Group>& groups() const noexcept { return groups_; }
  const Label& negative_label() const noexcept { return negative_label_; }

  std::vector<Label> generals() const {
    std::vector<Label> out;
    out.reserve(groups_.size());
    for (const auto& g : groups_) out.push_back(g.first);
    return out;
  }

  /// Fine labels in group order.
  std::vector<Label> fine_labels() const {
    std::vector<Label> out;
    for (const auto& g : groups_) out.insert(out.end(), g.second.begin(), g.second.end());
    return out;
  }

  const std::vector<Label>& fine_of(const Label& general) const {
    for (const auto& g : groups_) {
      if (g.first == general) return g.second;
    }
    throw UnknownLabelError(general);
  }

  bool is_general(const Label& label) const {
    return std::any_of(groups_.begin(), groups_.end(),
                       [&](const Group& g) { return g.first == label; });
  }

  bool is_fine(const Label& label) const { return general_index_.count(label) != 0; }

  std::size_t general_count() const noexcept { return groups_.size(); }

  std::size_t fine_count() const noexcept { return general_index_.size(); }

  friend bool operator==(const ClassTaxonomy& a, const ClassTaxonomy& b) {
    return a.groups_ == b.groups_ && a.negative_label_ == b.negative_label_;
  }

 private:
  friend Label general_of(const ClassTaxonomy&, const Label&);

  std::vector<Group> groups_;
  Label negative_label_ = "negative";
  std::map<Label, Label> general_index_;
};

/// The general class containing a fine label.
inline Label general_of(const ClassTaxonomy& taxonomy, const Label& fine) {
  const auto it = taxonomy.general_index_.find(fine);
  if (it == taxonomy.general_index_.end()) throw UnknownLabelError(fine);
  return it->second;
}

/// Every invariant violation of the taxonomy; empty when valid.
inline std::vector<std::string> validate_taxonomy(const ClassTaxonomy& taxonomy) {
  std::vector<std::string> violations;
  const auto& groups = taxonomy.groups();
  if (groups.empty()) violations.emplace_back("taxonomy has no general class");

  std::set<Label> generals;
  std::map<Label, std::vector<Label>> owners;
  for (const auto& [general, fines] : groups) {
    if (general.empty()) violations.emplace_back("empty general label");
    if (!generals.insert(general).second) violations.push_back("duplicate general class: " + general);
    if (fines.empty()) violations.push_back("empty general class: " + general);
    for (const auto& fine : fines) {
      if (fine.empty()) violations.push_back("empty fine label under " + general);
      owners[fine].push_back(general);
    }
  }
  for (const auto& [fine, gs] : owners) {
    if (gs.size() > 1) {
      std::string msg = "not a partition: " + fine + " listed under";
      for (const auto& g : gs) msg += " " + g;
      violations.push_back(msg);
    }
    if (generals.count(fine) != 0) violations.push_back("label is both general and fine: " + fine);
  }
  const auto& neg = taxonomy.negative_label();
  if (neg.empty()) violations.emplace_back("negative label is empty");
  if (generals.count(neg) != 0 || owners.count(neg) != 0) {
    violations.push_back("negative label used as a class: " + neg);
  }
  return violations;
}

inline ClassTaxonomy ClassTaxonomy::checked(std::vector<Group> groups, Label negative_label) {
  ClassTaxonomy taxonomy(std::move(groups), std::move(negative_label));
  const auto violations = validate_taxonomy(taxonomy);
  if (!violations.empty()) {
    std::string msg = "invalid taxonomy:";
    for (const auto& v : violations) msg += " " + v + ";";
    throw ValidationError(msg);
  }
  return taxonomy;
}

/// Five generals of two similar fine classes each.
inline ClassTaxonomy paired_taxonomy() {
  return ClassTaxonomy({{"dog", {"Pekinese", "Spaniel"}},
                        {"planet", {"Mars", "Saturn"}},
                        {"bike", {"sport bike", "mountain bike"}},
                        {"boat", {"Kayak", "canoe"}},
                        {"bird", {"swan", "duck"}}},
                       "negative");
}

enum class LabelLevel { Fine, General };

/// Maps a label to the requested level. General labels pass through unchanged
/// so stage-1 output can be compared with fine ground truth.
inline Label project_label(const ClassTaxonomy& taxonomy, const Label& label, LabelLevel level) {
  if (level == LabelLevel::Fine) return label;
  if (taxonomy.is_general(label)) return label;
  return general_of(taxonomy, label);
}

}  // namespace modcascade
