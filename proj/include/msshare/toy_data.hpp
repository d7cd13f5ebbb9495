#pragma once

#include <cstdint>
#include <filesystem>

namespace msshare {

struct ToyDataOptions {
    std::size_t size = 64;
    std::size_t train_per_class = 160;
    std::size_t val_per_class = 40;
    std::uint64_t seed = 2024;
};

/// Writes a 3-class pattern dataset (checker, hstripes, vstripes) as .rgb files
/// under root/train/<class>/ and root/val/<class>/. Each image draws a random
/// period, phase and colour pair plus per-pixel noise. Returns the image count.
std::size_t generate_toy_dataset(const std::filesystem::path& root, const ToyDataOptions& opts = {});

}  // namespace msshare
