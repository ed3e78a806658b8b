#include "octpair/splits.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <unordered_set>

namespace octpair {

bool fraction_in_grid(double fraction) {
  for (double f : kLabelFractionGrid)
    if (std::abs(fraction - f) < 1e-9) return true;
  return false;
}

namespace {

struct ClassPartition {
  int n_train = 0, n_val = 0, n_test = 0;
};

ClassPartition partition_counts(int n) {
  ClassPartition p;
  p.n_test = std::max(1, static_cast<int>(std::lround(0.10 * n)));
  p.n_val = std::max(1, static_cast<int>(std::lround(0.10 * n)));
  p.n_train = n - p.n_val - p.n_test;
  return p;
}

}  // namespace

SplitPlan make_splits(const DatasetManifest& manifest, int n_folds,
                      std::uint64_t seed) {
  if (n_folds < 1) throw ConfigError("n_folds must be >= 1");

  std::map<TissueClass, std::vector<std::string>> by_class;
  for (const InsertionEntry& e : manifest.insertions)
    by_class[e.meat_class].push_back(e.id);
  if (by_class.empty()) throw ConfigError("manifest has no insertions");
  for (const auto& [cls, ids] : by_class) {
    if (static_cast<int>(ids.size()) < n_folds)
      throw ConfigError("class " + std::string(to_string(cls)) + " has " +
                        std::to_string(ids.size()) + " insertions, need >= " +
                        std::to_string(n_folds));
    ClassPartition p = partition_counts(static_cast<int>(ids.size()));
    if (p.n_train < 1)
      throw ConfigError("class " + std::string(to_string(cls)) +
                        " too small for an 80:10:10 split");
  }

  SplitPlan plan;
  plan.seed = seed;
  std::vector<std::set<std::string>> seen_tests;
  for (int f = 0; f < n_folds; ++f) {
    FoldSpec fold;
    // bounded re-draws keep test sets distinct across folds where counts permit
    for (std::uint64_t attempt = 0; attempt < 64; ++attempt) {
      fold = FoldSpec{};
      for (const auto& [cls, ids] : by_class) {
        std::vector<std::string> shuffled = ids;
        Rng rng(hash_combine(hash_combine(seed, mix64(static_cast<std::uint64_t>(f))),
                             hash_combine(hash_str(to_string(cls)), mix64(attempt))));
        rng.shuffle(shuffled);
        ClassPartition p = partition_counts(static_cast<int>(ids.size()));
        auto it = shuffled.begin();
        fold.test.insert(fold.test.end(), it, it + p.n_test);
        it += p.n_test;
        fold.val.insert(fold.val.end(), it, it + p.n_val);
        it += p.n_val;
        fold.train.insert(fold.train.end(), it, shuffled.end());
      }
      std::set<std::string> test_set(fold.test.begin(), fold.test.end());
      if (std::find(seen_tests.begin(), seen_tests.end(), test_set) == seen_tests.end()) {
        seen_tests.push_back(std::move(test_set));
        break;
      }
      if (attempt == 63) seen_tests.emplace_back(fold.test.begin(), fold.test.end());
    }
    std::sort(fold.train.begin(), fold.train.end());
    std::sort(fold.val.begin(), fold.val.end());
    std::sort(fold.test.begin(), fold.test.end());
    plan.folds.push_back(std::move(fold));
  }
  assert_no_leakage(plan);
  return plan;
}

void assert_no_leakage(const SplitPlan& plan) {
  for (const FoldSpec& fold : plan.folds) {
    std::unordered_set<std::string> train(fold.train.begin(), fold.train.end());
    for (const std::string& id : fold.val)
      if (train.count(id)) throw ConfigError("insertion " + id + " in both train and val");
    for (const std::string& id : fold.test) {
      if (train.count(id)) throw ConfigError("insertion " + id + " in both train and test");
      if (std::find(fold.val.begin(), fold.val.end(), id) != fold.val.end())
        throw ConfigError("insertion " + id + " in both val and test");
    }
  }
}

std::vector<std::size_t> crops_of_insertions(const CropManifest& crops,
                                             const std::vector<std::string>& insertion_ids,
                                             bool labeled_only) {
  std::unordered_set<std::string> wanted(insertion_ids.begin(), insertion_ids.end());
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < crops.crops.size(); ++i) {
    const CropEntry& e = crops.crops[i];
    if (!wanted.count(e.insertion_id)) continue;
    if (labeled_only && !e.label) continue;
    out.push_back(i);
  }
  return out;
}

std::vector<std::size_t> subsample_train(const CropManifest& crops,
                                         const FoldSpec& fold, double fraction,
                                         std::uint64_t seed) {
  if (!fraction_in_grid(fraction))
    throw ConfigError("label fraction must be one of 10/20/30/60/80/100 percent");

  std::vector<std::size_t> labeled = crops_of_insertions(crops, fold.train, true);
  std::map<TissueClass, std::vector<std::size_t>> by_class;
  for (std::size_t idx : labeled) by_class[*crops.crops[idx].label].push_back(idx);

  std::vector<std::size_t> selected;
  for (auto& [cls, indices] : by_class) {
    // one shuffle per (seed, class); fraction picks a prefix, so subsets nest
    Rng rng(hash_combine(hash_combine(seed, hash_str("subsample")),
                         hash_str(to_string(cls))));
    rng.shuffle(indices);
    const long take = std::lround(fraction * static_cast<double>(indices.size()));
    if (take == 0)
      throw ConfigError("label fraction " + std::to_string(fraction) +
                        " rounds to zero crops for class " +
                        std::string(to_string(cls)));
    selected.insert(selected.end(), indices.begin(),
                    indices.begin() + std::min<long>(take, static_cast<long>(indices.size())));
  }
  std::sort(selected.begin(), selected.end());
  return selected;
}

}  // namespace octpair
