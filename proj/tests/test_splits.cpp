#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "octpair/splits.hpp"

using namespace octpair;

namespace {

DatasetManifest make_manifest(int beef, int pork, int turkey) {
  DatasetManifest manifest;
  auto add = [&](TissueClass cls, int count) {
    for (int i = 0; i < count; ++i) {
      InsertionEntry e;
      e.id = std::string(to_string(cls)) + "_" + std::to_string(i);
      e.meat_class = cls;
      manifest.insertions.push_back(e);
    }
  };
  add(TissueClass::beef, beef);
  add(TissueClass::pork, pork);
  add(TissueClass::turkey, turkey);
  return manifest;
}

CropManifest make_crops(const DatasetManifest& manifest, int labeled_per_insertion) {
  CropManifest crops;
  for (const InsertionEntry& e : manifest.insertions) {
    for (int k = 0; k < labeled_per_insertion; ++k) {
      CropEntry entry;
      entry.crop_id = e.id + "_c" + std::to_string(k);
      entry.insertion_id = e.id;
      entry.time_window_index = k;
      entry.label = k % 2 == 0 ? TissueClass::gelatin : e.meat_class;
      crops.crops.push_back(entry);
    }
    CropEntry unlabeled;
    unlabeled.crop_id = e.id + "_cx";
    unlabeled.insertion_id = e.id;
    unlabeled.time_window_index = labeled_per_insertion;
    crops.crops.push_back(unlabeled);
  }
  return crops;
}

int count_class(const DatasetManifest& manifest, const std::vector<std::string>& ids,
                TissueClass cls) {
  int count = 0;
  for (const std::string& id : ids)
    for (const InsertionEntry& e : manifest.insertions)
      if (e.id == id && e.meat_class == cls) ++count;
  return count;
}

}  // namespace

TEST_SUITE("splits") {

TEST_CASE("paper-scale manifest: stratified 80:10:10 within one insertion per class") {
  DatasetManifest manifest = make_manifest(34, 14, 18);
  SplitPlan plan = make_splits(manifest, 3, 42);
  REQUIRE(plan.folds.size() == 3);

  for (const FoldSpec& fold : plan.folds) {
    CHECK(fold.train.size() + fold.val.size() + fold.test.size() == 66);
    for (TissueClass cls : meat_classes()) {
      int n = 0;
      for (const InsertionEntry& e : manifest.insertions)
        if (e.meat_class == cls) ++n;
      const double expect_val = 0.1 * n;
      const double expect_train = 0.8 * n;
      CHECK(std::abs(count_class(manifest, fold.val, cls) - expect_val) <= 1.0);
      CHECK(std::abs(count_class(manifest, fold.test, cls) - expect_val) <= 1.0);
      CHECK(std::abs(count_class(manifest, fold.train, cls) - expect_train) <= 1.0);
    }
  }
}

TEST_CASE("folds are disjoint per fold and test sets differ across folds") {
  DatasetManifest manifest = make_manifest(34, 14, 18);
  SplitPlan plan = make_splits(manifest, 3, 7);
  CHECK_NOTHROW(assert_no_leakage(plan));
  std::set<std::vector<std::string>> test_sets;
  for (const FoldSpec& fold : plan.folds) test_sets.insert(fold.test);
  CHECK(test_sets.size() == 3);
}

TEST_CASE("same seed reproduces the identical plan; different seeds differ") {
  DatasetManifest manifest = make_manifest(34, 14, 18);
  SplitPlan a = make_splits(manifest, 3, 99);
  SplitPlan b = make_splits(manifest, 3, 99);
  for (int f = 0; f < 3; ++f) {
    CHECK(a.folds[f].train == b.folds[f].train);
    CHECK(a.folds[f].val == b.folds[f].val);
    CHECK(a.folds[f].test == b.folds[f].test);
  }
  SplitPlan c = make_splits(manifest, 3, 100);
  bool any_diff = false;
  for (int f = 0; f < 3; ++f) any_diff |= (a.folds[f].test != c.folds[f].test);
  CHECK(any_diff);
}

TEST_CASE("minimal 3/3/3 manifest splits as 1/1/1 per class") {
  DatasetManifest manifest = make_manifest(3, 3, 3);
  SplitPlan plan = make_splits(manifest, 3, 5);
  for (const FoldSpec& fold : plan.folds) {
    CHECK(fold.train.size() == 3);
    CHECK(fold.val.size() == 3);
    CHECK(fold.test.size() == 3);
  }
}

TEST_CASE("too few insertions per class rejected") {
  DatasetManifest manifest = make_manifest(2, 3, 3);
  CHECK_THROWS_AS(make_splits(manifest, 3, 0), ConfigError);
}

TEST_CASE("subsample: fraction 1.0 is the identity") {
  DatasetManifest manifest = make_manifest(4, 4, 4);
  CropManifest crops = make_crops(manifest, 10);
  SplitPlan plan = make_splits(manifest, 3, 11);
  const FoldSpec& fold = plan.folds[0];

  std::vector<std::size_t> all_labeled = crops_of_insertions(crops, fold.train, true);
  std::vector<std::size_t> full = subsample_train(crops, fold, 1.0, 123);
  CHECK(full == all_labeled);
}

TEST_CASE("subsample: per-class rounding and nestedness") {
  DatasetManifest manifest = make_manifest(4, 4, 4);
  CropManifest crops = make_crops(manifest, 10);
  SplitPlan plan = make_splits(manifest, 3, 11);
  const FoldSpec& fold = plan.folds[0];

  std::vector<std::size_t> at_10 = subsample_train(crops, fold, 0.10, 9);
  std::vector<std::size_t> at_20 = subsample_train(crops, fold, 0.20, 9);
  std::vector<std::size_t> at_100 = subsample_train(crops, fold, 1.00, 9);
  CHECK(std::includes(at_20.begin(), at_20.end(), at_10.begin(), at_10.end()));
  CHECK(std::includes(at_100.begin(), at_100.end(), at_20.begin(), at_20.end()));

  // per-class count law: round(fraction * count)
  std::map<TissueClass, long> full_counts, at20_counts;
  for (std::size_t idx : at_100) full_counts[*crops.crops[idx].label]++;
  for (std::size_t idx : at_20) at20_counts[*crops.crops[idx].label]++;
  for (const auto& [cls, count] : full_counts) {
    CAPTURE(to_string(cls));
    CHECK(at20_counts[cls] == std::lround(0.20 * static_cast<double>(count)));
  }
}

TEST_CASE("subsample: class rounding to zero is an error naming the class") {
  DatasetManifest manifest = make_manifest(4, 4, 4);
  CropManifest crops = make_crops(manifest, 2);  // 1 meat crop per insertion
  SplitPlan plan = make_splits(manifest, 3, 3);
  // fold train has 2 insertions per meat class -> 2 meat crops; 0.1 * 2 rounds to 0
  try {
    subsample_train(crops, plan.folds[0], 0.10, 1);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    const std::string what = e.what();
    CHECK(what.find("class") != std::string::npos);
  }
}

TEST_CASE("subsample rejects off-grid fractions") {
  DatasetManifest manifest = make_manifest(4, 4, 4);
  CropManifest crops = make_crops(manifest, 10);
  SplitPlan plan = make_splits(manifest, 3, 3);
  CHECK_THROWS_AS(subsample_train(crops, plan.folds[0], 0.5, 1), ConfigError);
}

TEST_CASE("crops_of_insertions separates labeled from unlabeled") {
  DatasetManifest manifest = make_manifest(3, 3, 3);
  CropManifest crops = make_crops(manifest, 4);
  std::vector<std::string> ids = {"beef_0", "pork_1"};
  auto all = crops_of_insertions(crops, ids, false);
  auto labeled = crops_of_insertions(crops, ids, true);
  CHECK(all.size() == 10);      // 5 crops per insertion including 1 unlabeled
  CHECK(labeled.size() == 8);
}

}  // TEST_SUITE
