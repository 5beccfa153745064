#include "muten/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <iterator>
#include <numeric>
#include <random>

namespace muten {

namespace {

std::vector<std::uint8_t> read_all(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DatasetError("cannot open '" + path.string() + "'");
    return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

std::uint32_t be32(const std::vector<std::uint8_t>& b, std::size_t off) {
    return (static_cast<std::uint32_t>(b[off]) << 24) | (static_cast<std::uint32_t>(b[off + 1]) << 16) |
           (static_cast<std::uint32_t>(b[off + 2]) << 8) | static_cast<std::uint32_t>(b[off + 3]);
}

}  // namespace

Tensor Dataset::tensor(std::size_t i) const {
    const auto img = image(i);
    return Tensor({1, rows, cols}, std::vector<float>(img.begin(), img.end()));
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
    Dataset out;
    out.rows = rows;
    out.cols = cols;
    out.pixels.reserve(indices.size() * image_size());
    out.labels.reserve(indices.size());
    for (auto i : indices) {
        const auto img = image(i);
        out.pixels.insert(out.pixels.end(), img.begin(), img.end());
        out.labels.push_back(labels.at(i));
    }
    return out;
}

Split split_from_string(const std::string& name) {
    if (name == "train") return Split::train;
    if (name == "test" || name == "t10k") return Split::test;
    throw ConfigError("unknown split '" + name + "' (expected train or test)");
}

Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels) {
    const auto img = read_all(images);
    const auto lab = read_all(labels);
    if (img.size() < 16) throw DatasetError("image file '" + images.string() + "' truncated header");
    if (lab.size() < 8) throw DatasetError("label file '" + labels.string() + "' truncated header");
    if (be32(img, 0) != 0x00000803) throw DatasetError("bad magic in image file '" + images.string() + "'");
    if (be32(lab, 0) != 0x00000801) throw DatasetError("bad magic in label file '" + labels.string() + "'");

    const std::size_t n = be32(img, 4);
    Dataset ds;
    ds.rows = be32(img, 8);
    ds.cols = be32(img, 12);
    if (be32(lab, 4) != n) {
        throw DatasetError("image count " + std::to_string(n) + " differs from label count " +
                           std::to_string(be32(lab, 4)));
    }
    if (img.size() != 16 + n * ds.rows * ds.cols) {
        throw DatasetError("image file '" + images.string() + "' length does not match its header");
    }
    if (lab.size() != 8 + n) throw DatasetError("label file '" + labels.string() + "' length does not match its header");

    ds.pixels.resize(n * ds.rows * ds.cols);
    std::transform(img.begin() + 16, img.end(), ds.pixels.begin(),
                   [](std::uint8_t v) { return static_cast<float>(v) / 255.0f; });
    ds.labels.assign(lab.begin() + 8, lab.end());
    for (auto l : ds.labels) {
        if (l > 9) throw DatasetError("label " + std::to_string(l) + " out of range 0-9");
    }
    return ds;
}

Dataset load_dataset(const std::filesystem::path& dir, Split split) {
    const std::string prefix = split == Split::train ? "train" : "t10k";
    for (const char* sep : {"-", "."}) {
        const auto images = dir / (prefix + "-images" + sep + "idx3-ubyte");
        const auto labels = dir / (prefix + "-labels" + sep + "idx1-ubyte");
        if (std::filesystem::exists(images) && std::filesystem::exists(labels)) return load_idx(images, labels);
    }
    throw DatasetError("no " + prefix + " IDX files found in '" + dir.string() + "'");
}

std::vector<std::size_t> sample_indices(std::size_t n, std::size_t count, std::uint64_t seed) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    count = std::min(count, n);
    std::mt19937_64 rng(seed);
    for (std::size_t i = 0; i < count; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, n - 1);
        std::swap(idx[i], idx[pick(rng)]);
    }
    idx.resize(count);
    return idx;
}

}  // namespace muten
