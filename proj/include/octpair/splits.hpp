#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "octpair/phantom.hpp"
#include "octpair/preprocess.hpp"

namespace octpair {

// Insertion-level partition; all crops of one insertion land in one side.
struct FoldSpec {
  std::vector<std::string> train;
  std::vector<std::string> val;
  std::vector<std::string> test;
};

struct SplitPlan {
  std::vector<FoldSpec> folds;
  std::uint64_t seed = 0;
};

inline constexpr std::array<double, 6> kLabelFractionGrid = {0.10, 0.20, 0.30,
                                                             0.60, 0.80, 1.00};

bool fraction_in_grid(double fraction);

// Stratified 80:10:10 resampling per meat class, one independent draw per
// fold, test sets kept distinct across folds where counts permit.
SplitPlan make_splits(const DatasetManifest& manifest, int n_folds = 3,
                      std::uint64_t seed = 0);

// Throws if train/val/test of any fold intersect.
void assert_no_leakage(const SplitPlan& plan);

// Class-stratified nested subsets of the fold's labeled training crops.
// Returns indices into crops.crops, ascending. For fixed seed the selection
// at a smaller fraction is a subset of the selection at a larger one.
std::vector<std::size_t> subsample_train(const CropManifest& crops,
                                         const FoldSpec& fold, double fraction,
                                         std::uint64_t seed);

// All crop indices (labeled or not) whose insertion is in the given id list.
std::vector<std::size_t> crops_of_insertions(const CropManifest& crops,
                                             const std::vector<std::string>& insertion_ids,
                                             bool labeled_only);

}  // namespace octpair
