#pragma once

#include <algorithm>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "modcascade/dataset.hpp"
#include "modcascade/detector.hpp"
#include "modcascade/parallel.hpp"

namespace modcascade {

enum class RoutingMode { V1, V2 };

struct RoutingConfig {
  double tau = 0.5;
  RoutingMode mode = RoutingMode::V1;
  std::size_t threads = 1;
};

struct ImageTrace {
  std::vector<Detection> stage1;
  std::vector<Label> triggered;  // generals this image triggered on its own
  std::vector<Label> invoked;    // stage-2 networks run on this image
  std::vector<std::pair<Label, std::vector<Detection>>> stage2;  // in invocation order
};

struct RoutingTrace {
  std::vector<ImageTrace> images;
  std::size_t stage1_inferences = 0;
  std::size_t stage2_inferences = 0;
};

struct CascadeOutput {
  std::vector<std::vector<Detection>> detections;  // fine labels, per image in dataset order
  RoutingTrace trace;
};

using Stage2Networks = std::map<Label, DetectorHandle>;

inline const char* to_string(RoutingMode mode) { return mode == RoutingMode::V1 ? "v1" : "v2"; }

namespace detail {

[[noreturn]] inline void rethrow_for_image(const Error& e, const std::string& image_id) {
  throw Error(e.kind(), "image " + image_id + ": " + e.what());
}

inline void check_routing_config(const RoutingConfig& config, RoutingMode expected) {
  if (!(config.tau >= 0.0 && config.tau <= 1.0)) throw ValidationError("routing threshold tau must lie in [0,1]");
  if (config.mode != expected) throw ValidationError("routing mode does not match the requested cascade");
}

/// Generals with at least one stage-1 detection at or above tau, in taxonomy order.
inline std::vector<Label> triggered_generals(const std::vector<Detection>& stage1, const ClassTaxonomy& taxonomy,
                                             double tau) {
  std::set<Label> hit;
  for (const auto& d : stage1) {
    if (!taxonomy.is_general(d.label)) {
      throw DetectorError("stage-1 detector emitted non-general label '" + d.label + "'");
    }
    if (d.confidence >= tau) hit.insert(d.label);
  }
  std::vector<Label> out;
  for (const auto& g : taxonomy.generals()) {
    if (hit.count(g) != 0) out.push_back(g);
  }
  return out;
}

inline void run_stage1(const Dataset& dataset, const DetectorHandle& stage1, const RoutingConfig& config,
                       RoutingTrace& trace) {
  trace.images.assign(dataset.images.size(), ImageTrace{});
  parallel_for(dataset.images.size(), config.threads, [&](std::size_t i) {
    const auto& image = dataset.images[i];
    try {
      auto& t = trace.images[i];
      t.stage1 = stage1.detect(image);
      t.triggered = triggered_generals(t.stage1, dataset.taxonomy, config.tau);
    } catch (const Error& e) {
      rethrow_for_image(e, image.id);
    }
  });
  trace.stage1_inferences = dataset.images.size();
}

/// Runs every invoked network on its image and assembles the final detections.
inline CascadeOutput run_stage2(const Dataset& dataset, const Stage2Networks& stage2, const RoutingConfig& config,
                                RoutingTrace trace) {
  CascadeOutput out;
  out.detections.assign(dataset.images.size(), {});
  parallel_for(dataset.images.size(), config.threads, [&](std::size_t i) {
    const auto& image = dataset.images[i];
    auto& t = trace.images[i];
    try {
      for (const auto& general : t.invoked) {
        const auto it = stage2.find(general);
        if (it == stage2.end()) throw ValidationError("no stage-2 network for triggered class '" + general + "'");
        auto dets = it->second.detect(image);
        const auto& scope = dataset.taxonomy.fine_of(general);
        for (const auto& d : dets) {
          if (std::find(scope.begin(), scope.end(), d.label) == scope.end()) {
            throw DetectorError("stage-2 network '" + general + "' emitted label '" + d.label + "' outside its scope");
          }
        }
        out.detections[i].insert(out.detections[i].end(), dets.begin(), dets.end());
        t.stage2.emplace_back(general, std::move(dets));
      }
    } catch (const Error& e) {
      rethrow_for_image(e, image.id);
    }
  });
  std::size_t invocations = 0;
  for (const auto& t : trace.images) invocations += t.invoked.size();
  trace.stage2_inferences = invocations;
  out.trace = std::move(trace);
  return out;
}

}  // namespace detail

/// Per-image cascade: each image goes to the stage-2 network of every general
/// class it triggers, unchanged (no cropping). Final detections are the union
/// of the invoked networks' outputs.
inline CascadeOutput route_v1(const Dataset& dataset, const DetectorHandle& stage1, const Stage2Networks& stage2,
                              const RoutingConfig& config) {
  detail::check_routing_config(config, RoutingMode::V1);
  RoutingTrace trace;
  detail::run_stage1(dataset, stage1, config, trace);
  for (auto& t : trace.images) t.invoked = t.triggered;
  return detail::run_stage2(dataset, stage2, config, std::move(trace));
}

/// Groups image indices by sequence; images outside every sequence form their own group.
inline std::vector<std::vector<std::size_t>> sequence_groups(const Dataset& dataset) {
  if (!dataset.sequences) throw ValidationError("sequence routing needs a dataset with sequences");
  const auto index = dataset.index();
  std::vector<bool> covered(dataset.images.size(), false);
  std::vector<std::vector<std::size_t>> groups;
  for (const auto& seq : *dataset.sequences) {
    std::vector<std::size_t> g;
    for (const auto& id : seq) {
      const auto it = index.find(id);
      if (it == index.end()) throw ValidationError("sequence references unknown image " + id);
      g.push_back(it->second);
      covered[it->second] = true;
    }
    groups.push_back(std::move(g));
  }
  for (std::size_t i = 0; i < covered.size(); ++i) {
    if (!covered[i]) groups.push_back({i});
  }
  return groups;
}

/// Sequence cascade: once any image of a sequence triggers a general class,
/// that class's stage-2 network runs on every image of the sequence. Triggers
/// are collected over the whole sequence before stage 2 starts.
inline CascadeOutput route_v2(const Dataset& dataset, const DetectorHandle& stage1, const Stage2Networks& stage2,
                              const RoutingConfig& config) {
  detail::check_routing_config(config, RoutingMode::V2);
  const auto groups = sequence_groups(dataset);
  RoutingTrace trace;
  detail::run_stage1(dataset, stage1, config, trace);
  for (const auto& group : groups) {
    std::set<Label> hit;
    for (const auto i : group) hit.insert(trace.images[i].triggered.begin(), trace.images[i].triggered.end());
    std::vector<Label> invoked;
    for (const auto& g : dataset.taxonomy.generals()) {
      if (hit.count(g) != 0) invoked.push_back(g);
    }
    for (const auto i : group) trace.images[i].invoked = invoked;
  }
  return detail::run_stage2(dataset, stage2, config, std::move(trace));
}

inline CascadeOutput route(const Dataset& dataset, const DetectorHandle& stage1, const Stage2Networks& stage2,
                           const RoutingConfig& config) {
  return config.mode == RoutingMode::V1 ? route_v1(dataset, stage1, stage2, config)
                                        : route_v2(dataset, stage1, stage2, config);
}

struct TreeVsFlat {
  std::size_t tree_inferences = 0;
  std::size_t flat_inferences = 0;
  double ratio = 1.0;
};

/// Inference count of the cascade against running every image through every
/// fine network with no routing.
inline TreeVsFlat compare_tree_vs_flat(const RoutingTrace& trace, std::size_t n_fine_networks) {
  if (n_fine_networks < 1) throw DomainError("compare_tree_vs_flat needs at least one fine network");
  TreeVsFlat out;
  out.tree_inferences = trace.stage1_inferences + trace.stage2_inferences;
  out.flat_inferences = trace.stage1_inferences * n_fine_networks;
  out.ratio = out.tree_inferences == 0
                  ? 1.0
                  : static_cast<double>(out.flat_inferences) / static_cast<double>(out.tree_inferences);
  return out;
}

/// Positive images holding a ground-truth object whose general class was not
/// invoked for that image.
inline std::vector<bool> false_negative_images(const Dataset& dataset, const RoutingTrace& trace) {
  std::vector<bool> fn(dataset.images.size(), false);
  for (std::size_t i = 0; i < dataset.images.size(); ++i) {
    const auto& invoked = trace.images.at(i).invoked;
    for (const auto& obj : dataset.images[i].objects) {
      const auto g = general_of(dataset.taxonomy, obj.fine_label);
      if (std::find(invoked.begin(), invoked.end(), g) == invoked.end()) {
        fn[i] = true;
        break;
      }
    }
  }
  return fn;
}

}  // namespace modcascade
