#pragma once

#include <cmath>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "modcascade/json_io.hpp"
#include "modcascade/taxonomy.hpp"

namespace modcascade {

/// Top-left corner plus extent, in pixels.
struct BoundingBox {
  double x = 0;
  double y = 0;
  double w = 0;
  double h = 0;

  double right() const noexcept { return x + w; }
  double bottom() const noexcept { return y + h; }
  double area() const noexcept { return w * h; }

  bool valid() const noexcept {
    return std::isfinite(x) && std::isfinite(y) && std::isfinite(w) && std::isfinite(h) && x >= 0 &&
           y >= 0 && w > 0 && h > 0;
  }

  bool within(double width, double height) const noexcept {
    return right() <= width && bottom() <= height;
  }

  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

struct Detection {
  BoundingBox box;
  Label label;
  double confidence = 0;

  friend bool operator==(const Detection&, const Detection&) = default;
};

struct GroundTruthObject {
  BoundingBox box;
  Label fine_label;

  friend bool operator==(const GroundTruthObject&, const GroundTruthObject&) = default;
};

/// An image with no objects is a negative image.
struct AnnotatedImage {
  std::string id;
  double width = 800;
  double height = 800;
  std::vector<GroundTruthObject> objects;

  bool negative() const noexcept { return objects.empty(); }

  friend bool operator==(const AnnotatedImage&, const AnnotatedImage&) = default;
};

using Sequence = std::vector<std::string>;

struct Dataset {
  ClassTaxonomy taxonomy;
  std::vector<AnnotatedImage> images;
  std::optional<std::vector<Sequence>> sequences;

  std::size_t positive_count() const {
    std::size_t n = 0;
    for (const auto& img : images) n += img.negative() ? 0 : 1;
    return n;
  }

  /// Image index for each id.
  std::map<std::string, std::size_t> index() const {
    std::map<std::string, std::size_t> out;
    for (std::size_t i = 0; i < images.size(); ++i) out.emplace(images[i].id, i);
    return out;
  }

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

/// Throws ValidationError naming the first offending image.
inline void validate_dataset(const Dataset& dataset) {
  const auto tax_violations = validate_taxonomy(dataset.taxonomy);
  if (!tax_violations.empty()) throw ValidationError("invalid taxonomy: " + tax_violations.front());

  std::set<std::string> ids;
  for (const auto& img : dataset.images) {
    if (img.id.empty()) throw ValidationError("image with empty id");
    if (!ids.insert(img.id).second) throw ValidationError("duplicate image id: " + img.id);
    if (!(std::isfinite(img.width) && std::isfinite(img.height) && img.width > 0 && img.height > 0)) {
      throw ValidationError("image " + img.id + ": non-positive dimensions");
    }
    for (std::size_t k = 0; k < img.objects.size(); ++k) {
      const auto& obj = img.objects[k];
      if (!dataset.taxonomy.is_fine(obj.fine_label)) {
        throw ValidationError("image " + img.id + ": unknown fine label '" + obj.fine_label + "'");
      }
      if (!obj.box.valid()) {
        throw ValidationError("image " + img.id + ": invalid box for object " + std::to_string(k));
      }
      if (!obj.box.within(img.width, img.height)) {
        throw ValidationError("image " + img.id + ": box out of bounds for object " + std::to_string(k));
      }
    }
  }
  if (dataset.sequences) {
    std::set<std::string> seen;
    for (const auto& seq : *dataset.sequences) {
      if (seq.empty()) throw ValidationError("empty sequence");
      for (const auto& id : seq) {
        if (ids.count(id) == 0) throw ValidationError("sequence references unknown image " + id);
        if (!seen.insert(id).second) throw ValidationError("image " + id + " appears in two sequences");
      }
    }
  }
}

namespace detail {

inline BoundingBox box_from_json(const Json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 4) throw ValidationError(where + ": box must be [x,y,w,h]");
  for (const auto& v : j) {
    if (!v.is_number()) throw ValidationError(where + ": box coordinates must be numbers");
  }
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
}

inline Json box_to_json(const BoundingBox& b) { return Json::array({b.x, b.y, b.w, b.h}); }

template <class T>
T required(const Json& j, const char* key, const std::string& where) {
  if (!j.is_object() || !j.contains(key)) throw ValidationError(where + ": missing key '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ValidationError(where + ": key '" + key + "' has the wrong type");
  }
}

}  // namespace detail

inline ClassTaxonomy taxonomy_from_json(const Json& j) {
  if (!j.is_object() || !j.contains("generals") || !j["generals"].is_object()) {
    throw ValidationError("taxonomy: 'generals' must be an object");
  }
  std::vector<ClassTaxonomy::Group> groups;
  for (const auto& [general, fines] : j["generals"].items()) {
    if (!fines.is_array()) throw ValidationError("taxonomy: fine list of " + general + " must be an array");
    std::vector<Label> labels;
    for (const auto& f : fines) {
      if (!f.is_string()) throw ValidationError("taxonomy: fine labels must be strings");
      labels.push_back(f.get<std::string>());
    }
    groups.emplace_back(general, std::move(labels));
  }
  const Label negative = j.value("negative_label", std::string("negative"));
  return ClassTaxonomy::checked(std::move(groups), negative);
}

inline Json taxonomy_to_json(const ClassTaxonomy& taxonomy) {
  Json generals = Json::object();
  for (const auto& [general, fines] : taxonomy.groups()) generals[general] = fines;
  return Json{{"generals", generals}, {"negative_label", taxonomy.negative_label()}};
}

/// Parses and validates an annotation document. Invalid data is rejected, never repaired.
inline Dataset dataset_from_json(const Json& doc) {
  if (!doc.is_object()) throw ValidationError("annotation document must be an object");
  if (!doc.contains("taxonomy")) throw ValidationError("missing key 'taxonomy'");
  if (!doc.contains("images") || !doc["images"].is_array()) throw ValidationError("'images' must be an array");

  Dataset ds;
  ds.taxonomy = taxonomy_from_json(doc["taxonomy"]);
  for (std::size_t i = 0; i < doc["images"].size(); ++i) {
    const auto& ji = doc["images"][i];
    AnnotatedImage img;
    const std::string where = "image #" + std::to_string(i);
    img.id = detail::required<std::string>(ji, "id", where);
    const std::string named = "image " + img.id;
    img.width = detail::required<double>(ji, "width", named);
    img.height = detail::required<double>(ji, "height", named);
    if (ji.contains("objects")) {
      if (!ji["objects"].is_array()) throw ValidationError(named + ": 'objects' must be an array");
      for (const auto& jo : ji["objects"]) {
        GroundTruthObject obj;
        obj.fine_label = detail::required<std::string>(jo, "label", named);
        if (!jo.contains("box")) throw ValidationError(named + ": object without box");
        obj.box = detail::box_from_json(jo["box"], named);
        img.objects.push_back(std::move(obj));
      }
    }
    ds.images.push_back(std::move(img));
  }
  if (doc.contains("sequences")) {
    if (!doc["sequences"].is_array()) throw ValidationError("'sequences' must be an array");
    std::vector<Sequence> seqs;
    for (const auto& js : doc["sequences"]) {
      if (!js.is_array()) throw ValidationError("each sequence must be an array of ids");
      Sequence seq;
      for (const auto& id : js) {
        if (!id.is_string()) throw ValidationError("sequence entries must be image ids");
        seq.push_back(id.get<std::string>());
      }
      seqs.push_back(std::move(seq));
    }
    ds.sequences = std::move(seqs);
  }
  validate_dataset(ds);
  return ds;
}

inline Json dataset_to_json(const Dataset& ds) {
  Json images = Json::array();
  for (const auto& img : ds.images) {
    Json objects = Json::array();
    for (const auto& obj : img.objects) {
      objects.push_back(Json{{"label", obj.fine_label}, {"box", detail::box_to_json(obj.box)}});
    }
    images.push_back(Json{{"id", img.id}, {"width", img.width}, {"height", img.height}, {"objects", objects}});
  }
  Json doc{{"taxonomy", taxonomy_to_json(ds.taxonomy)}, {"images", images}};
  if (ds.sequences) doc["sequences"] = *ds.sequences;
  return doc;
}

inline Dataset load_dataset(const std::filesystem::path& path) {
  return dataset_from_json(read_json_file(path));
}

inline void save_dataset(const Dataset& ds, const std::filesystem::path& path) {
  write_text_file(path, dump_json17(dataset_to_json(ds)));
}

}  // namespace modcascade
