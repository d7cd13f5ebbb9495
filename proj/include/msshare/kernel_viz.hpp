#pragma once

#include <cstdint>
#include <filesystem>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "msshare/image.hpp"
#include "msshare/layers.hpp"

namespace msshare {

enum class Aggregate { l1, l2 };

std::string_view to_string(Aggregate a);

struct RankedKernel {
    std::size_t index = 0;
    double magnitude = 0;
};

struct KernelRanking {
    std::string layer;
    Aggregate aggregate = Aggregate::l1;
    std::vector<RankedKernel> entries;  // magnitude descending, ties by ascending index
    std::size_t count = 256;
};

/// Ranks the output kernels of a (k_o, k_i, f, f) tensor by the L1 or L2 norm of
/// their k_i*f*f weights and keeps the top `count` (all of them if fewer exist).
KernelRanking rank_kernels(const Tensor& kernels, std::string layer, std::size_t count,
                           Aggregate aggregate = Aggregate::l1);

/// ceil(sqrt(count)) square grid of f x f tiles separated by 1-pixel black lines.
/// Each tile is the channel sum of one kernel, min-max normalized to 0..255; a
/// constant tile becomes 128. Grid slots past the ranking stay black.
GrayImage render_kernel_grid(const Tensor& kernels, const KernelRanking& ranking);

/// Header `rank,kernel_index,aggregate_magnitude`; rank starts at 1.
void write_ranking_csv(const KernelRanking& ranking, std::ostream& out);

/// Name of the last weight entry with a spatial extent above 1.
std::string default_viz_layer(Model& model);

/// Kernel tensor for a layer name (`layer4.1.conv2`) or a weight entry name
/// (`layer4.1.conv2.weight`). Unshared multi-scale layers need the rate entry,
/// e.g. `conv5.rate2.weight`. Throws std::invalid_argument when nothing matches.
const Tensor& find_kernels(Model& model, const std::string& name);

}  // namespace msshare
