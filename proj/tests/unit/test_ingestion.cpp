#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <random>

#include "vig/error.hpp"
#include "vig/ingestion.hpp"

using namespace vig;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  auto d = fs::temp_directory_path() / ("vig_ingest_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

MetadataBundle rec(const std::string& ds, const std::string& id, const std::string& uri, int captions, int qas) {
  MetadataBundle b{{ds, id, uri, 64, 48}, {}, {}, {}};
  for (int i = 0; i < captions; ++i) b.captions.push_back({ds + " caption " + std::to_string(i), ds});
  for (int i = 0; i < qas; ++i) b.qas.push_back({"q" + std::to_string(i) + "?", "a", ds});
  return b;
}

}  // namespace

TEST_CASE("registry registration") {
  DatasetRegistry reg;
  reg.register_dataset({"coco-captions", "a.jsonl", DatasetKind::captions, "coco", DatasetFormat::manifest, ""});
  reg.register_dataset({"visual-genome", "b.jsonl", DatasetKind::boxes, "vg", DatasetFormat::manifest, ""});
  CHECK(reg.size() == 2);
  reg.register_dataset({"coco-captions", "a.jsonl", DatasetKind::captions, "coco", DatasetFormat::manifest, ""});
  CHECK(reg.size() == 2);
  CHECK_THROWS_AS(reg.register_dataset({"coco-captions", "c.jsonl", DatasetKind::captions, "coco", DatasetFormat::manifest, ""}), DuplicateDataset);
}

TEST_CASE("link keys") {
  const ImageRef a{"coco", "123", "http://images/COCO_train2014_000000123.jpg", 10, 10};
  CHECK(link_key(a, "file-stem") == LinkKey{"file-stem", "coco_train2014_000000123"});
  CHECK(link_key(a, "file-stem") == link_key(a, "file-stem"));
  const ImageRef b{"vqa", "000123", "x.jpg", 10, 10};
  CHECK(link_key(a, "coco") == link_key(b, "coco"));

  SUBCASE("3-dataset fixture: pairwise equality table") {
    // image_id spellings of 2 shared pictures plus one unique picture per dataset
    std::vector<ImageRef> refs = {
        {"coco", "42", "", 1, 1}, {"coco", "7", "", 1, 1}, {"coco", "100", "", 1, 1},
        {"vqa", "0042", "", 1, 1}, {"vqa", "7", "", 1, 1}, {"vqa", "200", "", 1, 1},
        {"gqa", "000000000042", "", 1, 1}, {"gqa", "0007", "", 1, 1}, {"gqa", "300", "", 1, 1},
    };
    for (std::size_t i = 0; i < refs.size(); ++i) {
      for (std::size_t j = 0; j < refs.size(); ++j) {
        const bool same = std::stoll(refs[i].image_id) == std::stoll(refs[j].image_id);
        CHECK((link_key(refs[i], "coco") == link_key(refs[j], "coco")) == same);
      }
    }
  }
}

TEST_CASE("group_by_image folds groups and conserves annotations") {
  DatasetRegistry reg;
  reg.register_dataset({"a", "a.jsonl", DatasetKind::captions, "file-stem", DatasetFormat::manifest, ""});
  reg.register_dataset({"b", "b.jsonl", DatasetKind::qa, "file-stem", DatasetFormat::manifest, ""});
  LinkResolver resolver(reg);
  CHECK(group_by_image({}, resolver).empty());

  std::vector<MetadataBundle> records;
  std::mt19937_64 rng(5);
  for (int i = 0; i < 10; ++i) {
    const auto pic = std::to_string(i % 4);
    records.push_back(rec(i % 2 ? "a" : "b", std::to_string(i), "img/" + pic + ".jpg", static_cast<int>(rng() % 3),
                          static_cast<int>(rng() % 2) + (i % 2 ? 0 : 1)));
  }
  std::map<std::string, std::pair<std::size_t, std::size_t>> oracle;
  for (const auto& r : records) {
    auto& o = oracle["file-stem:" + uri_file_stem(r.image.uri)];
    o.first += r.captions.size();
    o.second += r.qas.size();
  }
  // Identical captions within one dataset collapse; make them unique first.
  for (std::size_t i = 0; i < records.size(); ++i) {
    for (auto& c : records[i].captions) c.text += " #" + std::to_string(i);
    for (auto& q : records[i].qas) q.question += " #" + std::to_string(i);
  }
  const auto grouped = group_by_image(records, resolver);
  CHECK(grouped.size() == 4);
  for (const auto& [key, bundle] : grouped) {
    CAPTURE(key.str());
    CHECK(bundle.captions.size() == oracle[key.str()].first);
    CHECK(bundle.qas.size() == oracle[key.str()].second);
  }
  for (std::size_t i = 1; i < grouped.size(); ++i) CHECK(grouped[i - 1].first < grouped[i].first);

  SUBCASE("permutation invariant, also when spilling runs") {
    auto shuffled = records;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    GroupOptions small;
    small.max_resident = 3;
    const auto again = group_by_image(shuffled, resolver, small);
    REQUIRE(again.size() == grouped.size());
    for (std::size_t i = 0; i < grouped.size(); ++i) {
      CHECK(again[i].first == grouped[i].first);
      CHECK(canonical_form(again[i].second) == canonical_form(grouped[i].second));
    }
  }
}

TEST_CASE("group_by_image propagates dimension conflicts") {
  DatasetRegistry reg;
  LinkResolver resolver(reg);
  auto a = rec("a", "1", "img/1.jpg", 1, 0);
  auto b = rec("b", "1", "img/1.jpg", 1, 0);
  b.image.width = 200;
  CHECK_THROWS_AS(group_by_image({a, b}, resolver), DimensionConflict);
}

TEST_CASE("registry file, adapters and id maps") {
  const auto dir = temp_dir("adapters");
  {
    std::ofstream(dir / "manifest.jsonl") << to_manifest_line(rec("m", "x1", "pics/shared.jpg", 1, 0)) << "\n"
                                          << "{broken\n";
    std::ofstream(dir / "coco.json") << R"({"images":[{"id":5,"file_name":"shared.jpg","width":64,"height":48}],
      "annotations":[{"image_id":5,"caption":"Two dogs."}]})";
    std::ofstream(dir / "inst.json") << R"({"images":[{"id":5,"file_name":"other.jpg","width":64,"height":48}],
      "categories":[{"id":1,"name":"dog"}],
      "annotations":[{"image_id":5,"category_id":1,"bbox":[1,2,10,10]}]})";
    std::ofstream(dir / "qa.jsonl") << R"({"image_id":"q9","uri":"shared.png","width":64,"height":48,"question":"How many dogs?","answer":"Two"})"
                                    << "\n";
    std::ofstream(dir / "idmap.jsonl") << R"({"dataset":"inst","image_id":"5","canonical_id":"shared"})" << "\n";
    std::ofstream(dir / "registry.json") << R"([
      {"dataset_id":"m","manifest_path":"manifest.jsonl"},
      {"dataset_id":"caps","manifest_path":"coco.json","format":"coco_captions","kind":"captions"},
      {"dataset_id":"inst","manifest_path":"inst.json","format":"coco_instances","kind":"boxes","link_namespace":"mapped","id_map":"idmap.jsonl"},
      {"dataset_id":"qa","manifest_path":"qa.jsonl","format":"qa_jsonl","kind":"qa"}])";
  }
  const auto reg = DatasetRegistry::load(dir / "registry.json");
  CHECK(reg.size() == 4);
  const auto serial = load_all(reg, false);
  const auto parallel = load_all(reg, true);
  REQUIRE(serial.records.size() == parallel.records.size());
  for (std::size_t i = 0; i < serial.records.size(); ++i) CHECK(serial.records[i] == parallel.records[i]);
  CHECK(serial.issues.size() == 1);  // the broken manifest line

  LinkResolver resolver(reg);
  const auto grouped = group_by_image(serial.records, resolver);
  // m, caps and qa share the stem "shared"; inst is mapped to "shared" under another namespace.
  std::size_t with_all = 0;
  for (const auto& [key, b] : grouped) {
    if (key.canonical_id == "shared" && key.ns == "file-stem") {
      CHECK(b.captions.size() == 2);
      CHECK(b.qas.size() == 1);
      ++with_all;
    }
  }
  CHECK(with_all == 1);

  std::ofstream(dir / "bad.json") << R"([{"dataset_id":"x","manifest_path":"missing.jsonl"}])";
  CHECK_THROWS_AS(DatasetRegistry::load(dir / "bad.json"), ConfigError);
  fs::remove_all(dir);
}
