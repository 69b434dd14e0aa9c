#include <filesystem>
#include <random>
#include <string>

#include <gtest/gtest.h>

#include "modcascade/dataset.hpp"
#include "modcascade/taxonomy.hpp"

namespace modcascade {
namespace {

namespace fs = std::filesystem;

fs::path temp_file(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "modcascade_core_test";
  fs::create_directories(dir);
  return dir / name;
}

const char* kTwoImages = R"({
  "taxonomy": {"generals": {"dog": ["Pekinese", "Spaniel"], "planet": ["Mars", "Saturn"]},
               "negative_label": "negative"},
  "images": [
    {"id": "img001", "width": 800, "height": 800, "objects": [{"label": "Pekinese", "box": [10, 20, 100, 120]}]},
    {"id": "img002", "width": 800, "height": 800, "objects": [{"label": "Saturn", "box": [0, 0, 800, 800]}]}
  ]
})";

TEST(Taxonomy, GeneralOfPairs) {
  const auto tax = paired_taxonomy();
  EXPECT_EQ(general_of(tax, "Pekinese"), "dog");
  EXPECT_EQ(general_of(tax, "Saturn"), "planet");
  EXPECT_THROW(general_of(ClassTaxonomy({{"dog", {"Pekinese", "Spaniel"}}}), "canoe"), UnknownLabelError);
}

TEST(Taxonomy, GeneralOfIsTotalAndNeverNegative) {
  const auto tax = paired_taxonomy();
  for (const auto& fine : tax.fine_labels()) {
    const auto g = general_of(tax, fine);
    EXPECT_NE(g, tax.negative_label());
    const auto& members = tax.fine_of(g);
    EXPECT_NE(std::find(members.begin(), members.end(), fine), members.end());
  }
}

TEST(Taxonomy, FiveByTwoIsValid) { EXPECT_TRUE(validate_taxonomy(paired_taxonomy()).empty()); }

TEST(Taxonomy, ReportsEveryViolation) {
  const ClassTaxonomy shared({{"dog", {"Pekinese", "Spaniel"}}, {"cat", {"Spaniel", "Siamese"}}});
  const auto v1 = validate_taxonomy(shared);
  ASSERT_EQ(v1.size(), 1u);
  EXPECT_NE(v1[0].find("not a partition"), std::string::npos);

  const ClassTaxonomy empty_group({{"dog", {"Pekinese"}}, {"planet", std::vector<Label>{}}});
  const auto v2 = validate_taxonomy(empty_group);
  ASSERT_EQ(v2.size(), 1u);
  EXPECT_NE(v2[0].find("empty general class"), std::string::npos);

  const ClassTaxonomy overlap({{"dog", {"dog", "Spaniel"}}}, "Spaniel");
  EXPECT_EQ(validate_taxonomy(overlap).size(), 2u);

  EXPECT_FALSE(validate_taxonomy(ClassTaxonomy()).empty());
  EXPECT_THROW(ClassTaxonomy::checked({ClassTaxonomy::Group{"dog", {}}}), ValidationError);
}

TEST(Dataset, LoadsMinimalFile) {
  const auto path = temp_file("two.json");
  write_text_file(path, kTwoImages);
  const auto ds = load_dataset(path);
  ASSERT_EQ(ds.images.size(), 2u);
  EXPECT_EQ(ds.images[0].objects[0].fine_label, "Pekinese");
  EXPECT_EQ(ds.images[0].objects[0].box, (BoundingBox{10, 20, 100, 120}));
  EXPECT_FALSE(ds.sequences.has_value());
  EXPECT_EQ(ds.positive_count(), 2u);
}

TEST(Dataset, ImageWithoutObjectsIsNegative) {
  auto doc = Json::parse(kTwoImages);
  doc["images"].push_back(Json{{"id", "neg"}, {"width", 640}, {"height", 480}, {"objects", Json::array()}});
  const auto ds = dataset_from_json(doc);
  ASSERT_EQ(ds.images.size(), 3u);
  EXPECT_TRUE(ds.images[2].negative());
  EXPECT_EQ(ds.positive_count(), 2u);
}

TEST(Dataset, RejectionNamesTheImage) {
  const auto expect_reject = [](Json doc, const std::string& fragment) {
    try {
      dataset_from_json(doc);
      ADD_FAILURE() << "accepted: " << fragment;
    } catch (const ValidationError& e) {
      EXPECT_NE(std::string(e.what()).find(fragment), std::string::npos) << e.what();
    }
  };
  auto unknown = Json::parse(kTwoImages);
  unknown["images"][1]["objects"][0]["label"] = "canoe";
  expect_reject(unknown, "img002");

  auto dup = Json::parse(kTwoImages);
  dup["images"][1]["id"] = "img001";
  expect_reject(dup, "img001");

  auto oob = Json::parse(kTwoImages);
  oob["images"][0]["objects"][0]["box"] = Json::array({750, 0, 100, 10});
  expect_reject(oob, "img001");

  auto zero = Json::parse(kTwoImages);
  zero["images"][0]["objects"][0]["box"] = Json::array({0, 0, 0, 10});
  expect_reject(zero, "img001");

  auto seq = Json::parse(kTwoImages);
  seq["sequences"] = Json::array({Json::array({"img001"}), Json::array({"img001", "img002"})});
  expect_reject(seq, "img001");
}

TEST(Dataset, MalformedJsonIsParseError) {
  const auto path = temp_file("broken.json");
  write_text_file(path, "{\"taxonomy\": ");
  EXPECT_THROW(load_dataset(path), ParseError);
  EXPECT_THROW(load_dataset(temp_file("does_not_exist.json")), IoError);
}

Dataset random_valid_dataset(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Dataset ds;
  ds.taxonomy = paired_taxonomy();
  const auto fines = ds.taxonomy.fine_labels();
  const int n = 1 + static_cast<int>(unit(rng) * 8);
  for (int i = 0; i < n; ++i) {
    AnnotatedImage img;
    img.id = "i" + std::to_string(i);
    img.width = 100 + std::floor(unit(rng) * 900);
    img.height = 100 + std::floor(unit(rng) * 900);
    const int objects = static_cast<int>(unit(rng) * 3);
    for (int k = 0; k < objects; ++k) {
      const double w = 1 + unit(rng) * (img.width - 1);
      const double h = 1 + unit(rng) * (img.height - 1);
      img.objects.push_back({{unit(rng) * (img.width - w), unit(rng) * (img.height - h), w, h},
                             fines[static_cast<std::size_t>(unit(rng) * static_cast<double>(fines.size()))]});
    }
    ds.images.push_back(img);
  }
  if (unit(rng) < 0.5) {
    ds.sequences.emplace();
    for (int i = 0; i + 1 < n; i += 2) ds.sequences->push_back({"i" + std::to_string(i), "i" + std::to_string(i + 1)});
  }
  return ds;
}

TEST(DatasetProperty, SaveLoadRoundTrip) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const auto ds = random_valid_dataset(rng);
    const auto path = temp_file("roundtrip.json");
    save_dataset(ds, path);
    const auto back = load_dataset(path);
    ASSERT_EQ(back, ds) << "trial " << trial;
    const auto text = read_text_file(path);
    save_dataset(back, path);
    ASSERT_EQ(read_text_file(path), text);
  }
}

TEST(DatasetProperty, AcceptsValidRejectsCorrupted) {
  std::mt19937_64 rng(12);
  std::uniform_int_distribution<int> pick(0, 4);
  for (int trial = 0; trial < 300; ++trial) {
    const auto ds = random_valid_dataset(rng);
    auto doc = dataset_to_json(ds);
    ASSERT_NO_THROW(dataset_from_json(doc));

    auto& images = doc["images"];
    auto& first = images[0];
    switch (pick(rng)) {
      case 0:
        images.push_back(first);  // duplicate id
        break;
      case 1:
        first["width"] = 0;
        break;
      case 2:
        first["objects"].push_back(Json{{"label", "unicorn"}, {"box", Json::array({0, 0, 1, 1})}});
        break;
      case 3:
        first["objects"].push_back(
            Json{{"label", "Mars"}, {"box", Json::array({first["width"].get<double>(), 0, 1, 1})}});
        break;
      default:
        doc["sequences"] = Json::array({Json::array({"missing-image"})});
        break;
    }
    EXPECT_THROW(dataset_from_json(doc), ValidationError) << "trial " << trial;
  }
}

}  // namespace
}  // namespace modcascade
