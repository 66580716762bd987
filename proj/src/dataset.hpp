#pragma once

#include <optional>
#include <string>
#include <vector>

#include "volume.hpp"

namespace comodal {

// One subject's modality-a and modality-b volumes. A sample is labeled iff
// both masks are present; mixed labeling is invalid.
struct BimodalSample {
    std::string id;
    Volume vol_a;
    Volume vol_b;
    std::optional<LabelMask> mask_a;
    std::optional<LabelMask> mask_b;
    bool paired{true};
    // Rigid transform applied to modality b relative to a (row-major 4x4,
    // voxel coordinates). Absent when the modalities were left aligned.
    std::optional<std::array<double, 16>> misalignment;

    bool labeled() const { return mask_a.has_value() && mask_b.has_value(); }
    void validate() const;
};

struct DatasetSplit {
    std::vector<BimodalSample> labeled;
    std::vector<BimodalSample> unlabeled;
    std::vector<BimodalSample> val;
    std::vector<BimodalSample> test;

    void validate() const;
    size_t total() const { return labeled.size() + unlabeled.size() + val.size() + test.size(); }
};

// Deterministic split: shuffle by seed, carve val/test counts off the front,
// then apply labeled_fraction to the remaining train pool (labeled count =
// max(1, round(fraction * pool size))). Unlabeled samples get their masks
// stripped. Changing the fraction never changes val/test membership.
DatasetSplit make_split(const std::vector<BimodalSample>& samples, double labeled_fraction,
                        uint64_t seed, int val_count = 0, int test_count = 0);

// Writes volumes/masks of every sample under dir/volumes and dir/masks plus a
// human-readable split.json manifest mapping split names to sample ids and
// file paths. Unlabeled samples get no mask files at all.
void save_split_dir(const DatasetSplit& split, const std::string& dir);

// Loads a directory written by save_split_dir.
DatasetSplit load_split_dir(const std::string& dir);

}  // namespace comodal
