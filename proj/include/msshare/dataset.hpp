#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "msshare/config.hpp"
#include "msshare/image.hpp"
#include "msshare/tensor.hpp"

namespace msshare {

enum class Split { train, eval };

struct Sample {
    Image image;
    std::int32_t label = 0;
    std::string source;  // path the image was read from
};

struct Dataset {
    std::vector<Sample> samples;
    std::vector<std::string> class_names;
    Split split = Split::train;

    std::size_t num_classes() const { return class_names.size(); }
    std::vector<std::int32_t> labels() const;
};

/// Reads `root/<split>/` when it exists (`train` or `val`), otherwise `root`
/// itself. One subdirectory per class; classes and files ordered lexicographically.
Dataset load_dataset(const std::filesystem::path& root, Split split);

/// Crop/flip/normalize settings. Normalization defaults to the conventional
/// ImageNet channel statistics.
struct PreprocessConfig {
    std::size_t resize = 256;
    std::size_t crop = 224;
    std::array<double, 3> mean{0.485, 0.456, 0.406};
    std::array<double, 3> std{0.229, 0.224, 0.225};

    /// Keys: resize, crop, mean (3 values), std (3 values).
    static PreprocessConfig from_config(const KeyValueConfig& cfg);
};

/// Bilinear resize with half-pixel-centred sampling: output pixel (y, x) reads
/// source (y + 0.5) * in/out - 0.5, clamped to the image.
Image resize_bilinear(const Image& img, std::size_t out_h, std::size_t out_w);

/// Resize so the shorter side equals `cfg.resize` (longer side rounded to nearest).
Image resize_shorter_side(const Image& img, std::size_t target);

/// Train: resize, random crop, horizontal flip with probability 0.5.
/// Eval: resize, centre crop. Both scale to [0,1] and standardize per channel.
/// Writes into sample `index` of `batch` (shape (N,3,crop,crop)).
void preprocess_into(const Image& img, Split split, const PreprocessConfig& cfg, std::mt19937_64& rng, Tensor& batch,
                     std::size_t index);

Tensor preprocess(const Image& img, Split split, const PreprocessConfig& cfg, std::mt19937_64& rng);

/// Inverse of the standardization step: back to [0,1] pixel intensities.
Tensor unnormalize(const Tensor& t, const PreprocessConfig& cfg);

/// Generator for one sample's augmentation, derived from (seed, epoch, index).
std::mt19937_64 sample_rng(std::uint64_t seed, std::uint64_t epoch, std::uint64_t index);

}  // namespace msshare
