#include "msshare/kernel_viz.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace msshare {

std::string_view to_string(Aggregate a) { return a == Aggregate::l1 ? "l1" : "l2"; }

KernelRanking rank_kernels(const Tensor& kernels, std::string layer, std::size_t count, Aggregate aggregate) {
    const Shape s = kernels.shape();
    if (s.n == 0 || s.h == 0 || s.w == 0) throw std::invalid_argument("rank_kernels: empty kernel tensor");
    if (count == 0) throw std::invalid_argument("rank_kernels: count must be positive");
    KernelRanking r{std::move(layer), aggregate, {}, count};
    const std::size_t per_kernel = s.c * s.h * s.w;
    r.entries.reserve(s.n);
    for (std::size_t k = 0; k < s.n; ++k) {
        const float* w = kernels.data() + k * per_kernel;
        double sum = 0;
        for (std::size_t i = 0; i < per_kernel; ++i) {
            const auto v = static_cast<double>(w[i]);
            sum += aggregate == Aggregate::l1 ? std::abs(v) : v * v;
        }
        r.entries.push_back({k, aggregate == Aggregate::l1 ? sum : std::sqrt(sum)});
    }
    std::stable_sort(r.entries.begin(), r.entries.end(),
                     [](const RankedKernel& a, const RankedKernel& b) { return a.magnitude > b.magnitude; });
    r.entries.resize(std::min(count, r.entries.size()));
    return r;
}

GrayImage render_kernel_grid(const Tensor& kernels, const KernelRanking& ranking) {
    const Shape s = kernels.shape();
    auto g = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(ranking.count))));
    while (g * g < ranking.count) ++g;
    while (g > 1 && (g - 1) * (g - 1) >= ranking.count) --g;

    GrayImage img;
    img.height = g * s.h + g - 1;
    img.width = g * s.w + g - 1;
    img.pixels.assign(img.height * img.width, 0);

    std::vector<double> tile(s.h * s.w);
    for (std::size_t slot = 0; slot < ranking.entries.size() && slot < g * g; ++slot) {
        const std::size_t k = ranking.entries[slot].index;
        std::fill(tile.begin(), tile.end(), 0.0);
        for (std::size_t c = 0; c < s.c; ++c) {
            for (std::size_t i = 0; i < tile.size(); ++i) {
                tile[i] += static_cast<double>(kernels[kernels.offset(k, c, 0, 0) + i]);
            }
        }
        const auto [lo, hi] = std::minmax_element(tile.begin(), tile.end());
        const double min = *lo;
        const double range = *hi - *lo;
        const std::size_t top = (slot / g) * (s.h + 1);
        const std::size_t left = (slot % g) * (s.w + 1);
        for (std::size_t y = 0; y < s.h; ++y) {
            for (std::size_t x = 0; x < s.w; ++x) {
                std::uint8_t v = 128;
                if (range > 0) v = static_cast<std::uint8_t>(std::lround(255.0 * (tile[y * s.w + x] - min) / range));
                img.pixels[(top + y) * img.width + left + x] = v;
            }
        }
    }
    return img;
}

void write_ranking_csv(const KernelRanking& ranking, std::ostream& out) {
    out << "rank,kernel_index,aggregate_magnitude\n";
    char buf[64];
    for (std::size_t i = 0; i < ranking.entries.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%zu,%zu,%.9g\n", i + 1, ranking.entries[i].index,
                      ranking.entries[i].magnitude);
        out << buf;
    }
}

std::string default_viz_layer(Model& model) {
    std::string last;
    for (const StateEntry& e : model.state()) {
        if (e.role == StateRole::weight && e.value->shape().h > 1) last = e.name;
    }
    if (last.empty()) throw std::invalid_argument("model has no spatial kernels to visualize");
    return last;
}

const Tensor& find_kernels(Model& model, const std::string& name) {
    const std::vector<StateEntry> state = model.state();
    for (const StateEntry& e : state) {
        if (e.role == StateRole::weight && (e.name == name || e.name == name + ".weight")) return *e.value;
    }
    std::string candidates;
    for (const StateEntry& e : state) {
        if (e.role == StateRole::weight && e.value->shape().h > 1 && e.name.starts_with(name + ".")) {
            candidates += (candidates.empty() ? "" : ", ") + e.name;
        }
    }
    if (!candidates.empty()) {
        throw std::invalid_argument("layer '" + name + "' holds several kernel tensors; pick one of: " + candidates);
    }
    throw std::invalid_argument("no convolution weights named '" + name + "'");
}

}  // namespace msshare
