#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tensor.hpp"

namespace scseg {

// Synthetic segmentation task: axis-aligned rectangles and discs over a flat
// background. Each class has a characteristic intensity, later shapes occlude
// earlier ones, and class c's area shrinks as class_size_skew^-c to induce
// imbalance. Fully deterministic from the seed.
struct DatasetSpec {
    int64_t num_train = 200;
    int64_t num_val = 25;
    int64_t num_test = 25;
    int64_t image_size = 32; // H = W, divisible by 16
    int64_t num_classes = 4; // including background class 0
    int64_t shapes_min = 4;
    int64_t shapes_max = 6;
    double intensity_separation = 1.0; // class intensities span [0, separation]
    double noise_std = 0.015;
    double class_size_skew = 1.25;  // >= 1; larger -> stronger imbalance
    double label_corruption = 0.0;  // fraction of train label pixels randomized
    uint64_t seed = 42;

    void validate() const; // throws ConfigError
};

struct SegmentationSample {
    Tensor image;   // [1,H,W], values in [0,1]
    IntTensor label; // [H,W], values in [0,K)
};

struct Dataset {
    DatasetSpec spec;
    std::vector<SegmentationSample> train, val, test;

    const std::vector<SegmentationSample>& split(const std::string& name) const;
};

// Every class is guaranteed present in the training split; generation retries
// with more shapes per image if one is missing, and fails loudly after a
// bounded number of attempts.
Dataset generate_synthetic_dataset(const DatasetSpec& spec);

// Epoch-dependent deterministic shuffle (stream seeded by seed ^ epoch),
// chunked into batches; the final short batch is included.
std::vector<std::vector<int64_t>> batch_indices(int64_t n, int64_t batch_size, uint64_t seed,
                                                int64_t epoch);

// Batch assembly: images -> [B,Cin=1,H,W], labels -> [B,H,W].
Tensor stack_images(const std::vector<SegmentationSample>& samples,
                    const std::vector<int64_t>& indices);
IntTensor stack_labels(const std::vector<SegmentationSample>& samples,
                       const std::vector<int64_t>& indices);

// Split files hold entries "image/<i>" (f64) and "label/<i>" (u32).
void write_dataset_split(const std::string& path,
                         const std::vector<SegmentationSample>& samples);
std::vector<SegmentationSample> read_dataset_split(const std::string& path);

} // namespace scseg
