#include <algorithm>
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "modcascade/detector.hpp"
#include "modcascade/eval.hpp"
#include "modcascade/experiment.hpp"
#include "oracles.hpp"

namespace modcascade {
namespace {

Detection det(double x, double y, double w, double h, const Label& label, double conf) {
  return {{x, y, w, h}, label, conf};
}

GroundTruthObject gt(double x, double y, double w, double h, const Label& label) { return {{x, y, w, h}, label}; }

TEST(Iou, Fixtures) {
  const BoundingBox a{0, 0, 10, 10};
  EXPECT_EQ(iou(a, a), 1.0);
  EXPECT_EQ(iou(a, {20, 20, 5, 5}), 0.0);
  EXPECT_EQ(iou(a, {10, 0, 10, 10}), 0.0);  // touching edges
  EXPECT_EQ(iou(a, {5, 0, 10, 10}), 1.0 / 3.0);
}

TEST(Iou, AgreesWithPixelCount) {
  std::mt19937_64 rng(21);
  std::uniform_int_distribution<int> pos(0, 40);
  std::uniform_int_distribution<int> ext(1, 30);
  for (int trial = 0; trial < 2000; ++trial) {
    const BoundingBox a{double(pos(rng)), double(pos(rng)), double(ext(rng)), double(ext(rng))};
    const BoundingBox b{double(pos(rng)), double(pos(rng)), double(ext(rng)), double(ext(rng))};
    EXPECT_NEAR(iou(a, b), oracle::grid_iou(a, b), 1e-12);
    EXPECT_EQ(iou(a, b), iou(b, a));
  }
}

TEST(Match, SingleExactHit) {
  const std::vector<Detection> d{det(0, 0, 10, 10, "Mars", 0.9)};
  const std::vector<GroundTruthObject> g{gt(0, 0, 10, 10, "Mars")};
  const auto m = match_detections(d, g, 0.5);
  ASSERT_TRUE(m.detections[0].gt.has_value());
  EXPECT_TRUE(m.detections[0].correct_label);
  EXPECT_TRUE(m.unmatched_gts.empty());
}

TEST(Match, HigherConfidenceWinsSharedTruth) {
  const std::vector<Detection> d{det(0, 0, 10, 10, "Mars", 0.6), det(1, 0, 10, 10, "Mars", 0.8)};
  const std::vector<GroundTruthObject> g{gt(0, 0, 10, 10, "Mars")};
  const auto m = match_detections(d, g, 0.5);
  EXPECT_FALSE(m.detections[0].gt.has_value());
  EXPECT_TRUE(m.detections[1].gt.has_value());
}

TEST(Match, WrongLabelStillMatches) {
  const std::vector<Detection> d{det(0, 0, 10, 10, "Spaniel", 0.9)};
  const std::vector<GroundTruthObject> g{gt(0, 0, 10, 10, "Pekinese")};
  const auto tax = paired_taxonomy();
  const auto fine = match_detections(d, g, 0.5);
  EXPECT_TRUE(fine.detections[0].gt.has_value());
  EXPECT_FALSE(fine.detections[0].correct_label);
  const auto general = match_detections(d, g, 0.5, LabelLevel::General, &tax);
  EXPECT_TRUE(general.detections[0].correct_label);
}

TEST(Match, RejectsBadThreshold) {
  EXPECT_THROW(match_detections({}, {}, 0.0), DomainError);
  EXPECT_THROW(match_detections({}, {}, 1.5), DomainError);
}

TEST(MatchProperty, AgreesWithBruteForce) {
  std::mt19937_64 rng(22);
  std::uniform_int_distribution<int> pos(0, 60);
  std::uniform_int_distribution<int> ext(5, 30);
  std::uniform_int_distribution<int> conf(0, 9);  // coarse, so ties occur
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<GroundTruthObject> g;
    for (int i = 0; i < 10; ++i) g.push_back(gt(pos(rng), pos(rng), ext(rng), ext(rng), "Mars"));
    std::vector<Detection> d;
    for (int i = 0; i < 20; ++i) {
      // Half the detections are jittered copies of a truth so matches are common.
      if (i % 2 == 0) {
        const auto& src = g[static_cast<std::size_t>(i / 2)].box;
        d.push_back(det(src.x + pos(rng) % 5, src.y + pos(rng) % 5, src.w, src.h, "Mars", conf(rng) / 10.0));
      } else {
        d.push_back(det(pos(rng), pos(rng), ext(rng), ext(rng), "Mars", conf(rng) / 10.0));
      }
    }
    const auto m = match_detections(d, g, 0.5);
    const auto expected = oracle::greedy_matching(d, g, 0.5);
    std::vector<bool> claimed(g.size(), false);
    for (std::size_t k = 0; k < d.size(); ++k) {
      const int got = m.detections[k].gt ? static_cast<int>(*m.detections[k].gt) : -1;
      ASSERT_EQ(got, expected[k]) << "trial " << trial << " det " << k;
      if (got >= 0) {
        EXPECT_FALSE(claimed[static_cast<std::size_t>(got)]);
        claimed[static_cast<std::size_t>(got)] = true;
        EXPECT_GE(iou(d[k].box, g[static_cast<std::size_t>(got)].box), 0.5);
      }
    }
    EXPECT_EQ(m.unmatched_gts.size(), static_cast<std::size_t>(std::count(claimed.begin(), claimed.end(), false)));
  }
}

MatchResult single_image(const std::vector<Detection>& d, const std::vector<GroundTruthObject>& g) {
  MatchResult r;
  r.images.push_back(match_detections(d, g, 0.5));
  return r;
}

TEST(AveragePrecision, Fixtures) {
  const std::vector<GroundTruthObject> g{gt(0, 0, 10, 10, "Mars"), gt(100, 100, 10, 10, "Mars")};
  EXPECT_EQ(average_precision("Mars", single_image({det(0, 0, 10, 10, "Mars", 0.9), det(100, 100, 10, 10, "Mars", 0.8)}, g)),
            1.0);
  EXPECT_EQ(average_precision("Mars", single_image({}, g)), 0.0);
  const std::vector<Detection> d{det(0, 0, 10, 10, "Mars", 0.9), det(300, 300, 10, 10, "Mars", 0.8),
                                 det(100, 100, 10, 10, "Mars", 0.7)};
  EXPECT_EQ(average_precision("Mars", single_image(d, g)), 5.0 / 6.0);
  EXPECT_THROW(average_precision("Saturn", single_image(d, g)), DomainError);
}

TEST(AveragePrecision, AddingTopTruePositiveNeverHurts) {
  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<GroundTruthObject> g;
    std::vector<Detection> d;
    const int n = 2 + static_cast<int>(unit(rng) * 8);
    for (int i = 0; i < n; ++i) g.push_back(gt(i * 50.0, 0, 20, 20, "Mars"));
    double max_fp = 0;
    // Leave truth 0 free, detect others at random, sprinkle false positives.
    for (int i = 1; i < n; ++i) {
      if (unit(rng) < 0.6) d.push_back(det(i * 50.0, 0, 20, 20, "Mars", unit(rng)));
    }
    for (int k = 0; k < 4; ++k) {
      const double c = unit(rng);
      max_fp = std::max(max_fp, c);
      d.push_back(det(0, 500 + k * 30.0, 20, 20, "Mars", c));
    }
    const double before = average_precision("Mars", single_image(d, g));
    d.push_back(det(0, 0, 20, 20, "Mars", std::nextafter(max_fp, 2.0)));
    const double after = average_precision("Mars", single_image(d, g));
    EXPECT_GE(after, before);
  }
}

TEST(FnAccounting, Fixtures) {
  EXPECT_EQ(map_with_fn_accounting(0.95, 95, 5), 0.9025);
  EXPECT_EQ(map_with_fn_accounting(0.8, 10, 0), 0.8);
  EXPECT_EQ(map_with_fn_accounting(0.8, 0, 7), 0.0);
  EXPECT_THROW(map_with_fn_accounting(0.8, 0, 0), DomainError);
}

TEST(FnAccounting, LinearInFalseNegativeFraction) {
  std::mt19937_64 rng(24);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> count(1, 500);
  for (int trial = 0; trial < 500; ++trial) {
    const double m = unit(rng);
    const std::size_t fn = 2 * count(rng);
    const std::size_t total = fn + count(rng);
    const double f = static_cast<double>(fn) / static_cast<double>(total);
    const double full = map_with_fn_accounting(m, total - fn, fn);
    EXPECT_NEAR(full, m * (1 - f), 1e-15);
    // Same positive images, half of the false negatives recovered.
    const double half = map_with_fn_accounting(m, total - fn / 2, fn / 2);
    EXPECT_NEAR(half, (full + m) / 2, 1e-15);
    EXPECT_EQ(map_with_fn_accounting(m, total, 0), m);
  }
}

TEST(ClassificationError, Fixtures) {
  MatchResult r;
  ImageMatch img;
  for (int i = 0; i < 100; ++i) {
    img.gt_labels.push_back("Mars");
    img.detections.push_back({det(0, 0, 1, 1, i < 12 ? "Saturn" : "Mars", 0.5), static_cast<std::size_t>(i), i >= 12});
  }
  img.detections.push_back({det(0, 0, 1, 1, "Saturn", 0.5), std::nullopt, false});  // unmatched FP is ignored
  r.images.push_back(img);
  EXPECT_EQ(classification_error(r), 0.12);
  for (auto& m : r.images[0].detections) m.correct_label = true;
  EXPECT_EQ(classification_error(r), 0.0);
  EXPECT_THROW(classification_error(MatchResult{}), DomainError);
}

TEST(ClassificationError, CalibratedDetectorFrequency) {
  SynthConfig c;
  c.images_per_class = 500;
  c.negatives = 0;
  const auto ds = synthesize(c, 5);
  const auto& tax = ds.taxonomy;
  auto p = make_preset_profile(tax, tax.fine_labels(), {0.12, 0.0, ErrorSpread::Siblings, 1.0});
  const auto handle = DetectorHandle::simulated(p, 6, tax);
  std::vector<std::vector<Detection>> dets;
  for (const auto& img : ds.images) dets.push_back(detect(handle, img));
  EXPECT_NEAR(classification_error(match_dataset(ds, dets, 0.5)), 0.12, 0.01);
}

TEST(Confusion, DiagonalAndGeneralCollapse) {
  const auto tax = paired_taxonomy();
  const std::vector<GroundTruthObject> g{gt(0, 0, 10, 10, "Pekinese"), gt(50, 0, 10, 10, "Spaniel"),
                                         gt(100, 0, 10, 10, "Mars")};
  MatchResult ok;
  ok.images.push_back(match_detections(
      std::vector<Detection>{det(0, 0, 10, 10, "Pekinese", .9), det(50, 0, 10, 10, "Spaniel", .9),
                             det(100, 0, 10, 10, "Mars", .9)},
      g, 0.5));
  const auto diag = confusion_matrix(ok, LabelLevel::Fine, tax);
  for (const auto& [t, row] : diag) {
    for (const auto& [p, n] : row) EXPECT_EQ(t, p);
  }

  MatchResult swapped;
  swapped.images.push_back(match_detections(
      std::vector<Detection>{det(0, 0, 10, 10, "Spaniel", .9), det(50, 0, 10, 10, "Pekinese", .9)}, g, 0.5));
  const auto fine = confusion_matrix(swapped, LabelLevel::Fine, tax);
  EXPECT_EQ(fine.at("Pekinese").at("Spaniel"), 1u);
  EXPECT_EQ(fine.at("Mars").at(kMissColumn), 1u);
  const auto general = confusion_matrix(swapped, LabelLevel::General, tax);
  EXPECT_EQ(general.at("dog").at("dog"), 2u);
  EXPECT_EQ(general.at("dog").size(), 1u);
  EXPECT_EQ(general.at("planet").at(kMissColumn), 1u);

  MatchResult unknown;
  unknown.images.push_back(match_detections(std::vector<Detection>{det(0, 0, 10, 10, "unicorn", .9)}, g, 0.5));
  EXPECT_THROW(confusion_matrix(unknown, LabelLevel::Fine, tax), UnknownLabelError);
}

/// Random detections around a synthetic dataset, labels drawn from the whole fine space.
std::vector<std::vector<Detection>> random_detections(const Dataset& ds, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const auto fines = ds.taxonomy.fine_labels();
  std::vector<std::vector<Detection>> out(ds.images.size());
  for (std::size_t i = 0; i < ds.images.size(); ++i) {
    for (const auto& obj : ds.images[i].objects) {
      if (unit(rng) < 0.2) continue;
      auto box = obj.box;
      box.x = std::clamp(box.x + (unit(rng) - 0.5) * 40, 0.0, ds.images[i].width - box.w);
      const auto label = unit(rng) < 0.7 ? obj.fine_label : fines[static_cast<std::size_t>(unit(rng) * fines.size())];
      out[i].push_back({box, label, unit(rng)});
    }
    if (unit(rng) < 0.3) {
      out[i].push_back({{10, 10, 50, 50}, fines[static_cast<std::size_t>(unit(rng) * fines.size())], unit(rng)});
    }
  }
  return out;
}

Dataset small_synth(std::uint64_t seed) {
  SynthConfig c;
  c.images_per_class = 10;
  c.negatives = 10;
  return synthesize(c, seed);
}

TEST(EvalProperty, ConfusionRowsRecount) {
  std::mt19937_64 rng(25);
  for (int trial = 0; trial < 30; ++trial) {
    const auto ds = small_synth(rng());
    const auto dets = random_detections(ds, rng);
    const auto m = match_dataset(ds, dets, 0.5);
    const auto conf = confusion_matrix(m, LabelLevel::Fine, ds.taxonomy);
    std::map<Label, std::size_t> truth_count;
    for (const auto& img : ds.images) {
      for (const auto& o : img.objects) ++truth_count[o.fine_label];
    }
    for (const auto& [label, n] : truth_count) {
      const auto& row = conf.at(label);
      const auto sum = std::accumulate(row.begin(), row.end(), std::size_t{0},
                                       [](std::size_t s, const auto& kv) { return s + kv.second; });
      EXPECT_EQ(sum, n) << label;
    }
  }
}

TEST(EvalProperty, GeneralErrorNeverExceedsFine) {
  std::mt19937_64 rng(26);
  for (int trial = 0; trial < 50; ++trial) {
    const auto ds = small_synth(rng());
    const auto m = match_dataset(ds, random_detections(ds, rng), 0.5);
    EXPECT_LE(classification_error(m, LabelLevel::General, ds.taxonomy), classification_error(m));
  }
}

TEST(EvalProperty, IndependentOfImageOrder) {
  std::mt19937_64 rng(27);
  for (int trial = 0; trial < 30; ++trial) {
    const auto ds = small_synth(rng());
    const auto dets = random_detections(ds, rng);
    std::vector<std::size_t> perm(ds.images.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Dataset shuffled = ds;
    std::vector<std::vector<Detection>> shuffled_dets;
    shuffled.images.clear();
    for (const auto i : perm) {
      shuffled.images.push_back(ds.images[i]);
      shuffled_dets.push_back(dets[i]);
    }
    const auto a = match_dataset(ds, dets, 0.5);
    const auto b = match_dataset(shuffled, shuffled_dets, 0.5);
    EXPECT_EQ(mean_average_precision(a).per_class, mean_average_precision(b).per_class);
    EXPECT_EQ(classification_error(a), classification_error(b));
    EXPECT_EQ(confusion_matrix(a, LabelLevel::Fine, ds.taxonomy), confusion_matrix(b, LabelLevel::Fine, ds.taxonomy));
  }
}

TEST(EvalProperty, NoiselessMapIsOneAndDecaysWithSigma) {
  SynthConfig c;
  c.images_per_class = 40;
  c.negatives = 20;
  const std::vector<double> sigmas{0, 10, 25, 50, 100};
  std::vector<double> mean_map(sigmas.size(), 0);
  const int seeds = 5;
  for (int s = 0; s < seeds; ++s) {
    const auto ds = synthesize(c, 100 + s);
    const auto& tax = ds.taxonomy;
    for (std::size_t k = 0; k < sigmas.size(); ++k) {
      auto p = make_preset_profile(tax, tax.fine_labels(), {0.0, 0.0, ErrorSpread::Siblings, 1.0});
      p.loc_noise_sigma = sigmas[k];
      const auto handle = DetectorHandle::simulated(p, 200 + s, tax);
      std::vector<std::vector<Detection>> dets;
      for (const auto& img : ds.images) dets.push_back(detect(handle, img));
      const double map = mean_average_precision(match_dataset(ds, dets, 0.5)).value;
      if (k == 0) {
        EXPECT_EQ(map, 1.0);
      }
      mean_map[k] += map / seeds;
    }
  }
  for (std::size_t k = 1; k < sigmas.size(); ++k) EXPECT_LE(mean_map[k], mean_map[k - 1]) << sigmas[k];
  EXPECT_LT(mean_map.back(), 0.9);
}

}  // namespace
}  // namespace modcascade
