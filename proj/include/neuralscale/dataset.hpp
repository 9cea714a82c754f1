#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "neuralscale/arch.hpp"

namespace neuralscale {

// Row-major samples of shape (channels, height, width).
struct Split {
    std::vector<double> features;
    std::vector<int> labels;

    std::size_t size() const { return labels.size(); }
    bool empty() const { return labels.empty(); }
};

struct Dataset {
    InputShape shape;
    int num_classes = 0;
    Split train;
    Split validation;

    std::size_t sample_size() const {
        return static_cast<std::size_t>(shape.channels) * shape.height * shape.width;
    }
};

// Throws Domain on empty splits, bad labels, or feature/label size mismatch.
void validate_dataset(const Dataset& data);

struct BlobOptions {
    int num_classes = 4;
    int dim = 16;
    int train_per_class = 200;
    int validation_per_class = 50;
    double separation = 3.0;  // scale of the class centres
    double noise = 1.0;       // per-coordinate standard deviation
    int clusters_per_class = 1;  // > 1 makes each class a mixture, so the task is no longer linear
    std::uint64_t seed = 1;
};

// Isotropic Gaussian blobs around random centres.
Dataset make_blobs(const BlobOptions& opts);

struct TextureOptions {
    int num_classes = 4;
    int channels = 3;
    int size = 16;
    int train_per_class = 64;
    int validation_per_class = 16;
    double noise = 0.3;
    std::uint64_t seed = 1;
};

// Oriented sinusoidal gratings (one orientation per class) with random
// phase, frequency jitter and additive noise.
Dataset make_textures(const TextureOptions& opts);

// Binary dataset file, little-endian:
//   char[8]  magic "NSDSET01"
//   u32      dtype (1 = float32, 2 = float64)
//   u32      channels, height, width, num_classes
//   u64      n_train, n_validation
//   train features (n_train * C*H*W of dtype), train labels (n_train * u32),
//   validation features, validation labels.
void save_dataset(const Dataset& data, const std::filesystem::path& path, bool float32 = true);
Dataset load_dataset(const std::filesystem::path& path);

}  // namespace neuralscale
