#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "muten/tensor.hpp"

namespace muten {

/// Labeled grayscale images, pixels scaled to [0,1], stored contiguously.
struct Dataset {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<float> pixels;
    std::vector<std::uint8_t> labels;

    std::size_t size() const noexcept { return labels.size(); }
    std::size_t image_size() const noexcept { return rows * cols; }
    std::span<const float> image(std::size_t i) const { return {pixels.data() + i * image_size(), image_size()}; }
    const float* image_ptr(std::size_t i) const { return pixels.data() + i * image_size(); }

    /// Copy of sample i as a [1, rows, cols] tensor.
    Tensor tensor(std::size_t i) const;

    /// New dataset holding only the given samples, in that order.
    Dataset subset(std::span<const std::size_t> indices) const;
};

enum class Split { train, test };

Split split_from_string(const std::string& name);

/// Parses one IDX image file and its label file (big-endian headers).
Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels);

/// Loads the MNIST split from a directory holding the standard file names
/// (plain or with the dotted "idx3-ubyte" variants).
Dataset load_dataset(const std::filesystem::path& dir, Split split);

/// `count` distinct indices drawn uniformly from [0, n) with a seeded shuffle.
std::vector<std::size_t> sample_indices(std::size_t n, std::size_t count, std::uint64_t seed);

}  // namespace muten
