#include "msshare/toy_data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <random>
#include <string>

#include "msshare/image.hpp"

namespace msshare {
namespace {

constexpr std::array<const char*, 3> kClasses = {"checker", "hstripes", "vstripes"};

Image make_pattern(std::size_t cls, std::size_t size, std::mt19937_64& rng) {
    std::uniform_int_distribution<int> period_dist(4, 12);
    std::uniform_int_distribution<int> channel(0, 255);
    std::uniform_int_distribution<int> noise(-24, 24);
    const int period = period_dist(rng);
    const int phase_y = std::uniform_int_distribution<int>(0, 2 * period - 1)(rng);
    const int phase_x = std::uniform_int_distribution<int>(0, 2 * period - 1)(rng);

    // Redraw until the two colours are clearly apart.
    std::array<int, 3> a{}, b{};
    do {
        for (int& v : a) v = channel(rng);
        for (int& v : b) v = channel(rng);
    } while (std::abs(a[0] - b[0]) + std::abs(a[1] - b[1]) + std::abs(a[2] - b[2]) < 180);

    Image img(size, size);
    for (std::size_t y = 0; y < size; ++y) {
        for (std::size_t x = 0; x < size; ++x) {
            const bool row = ((static_cast<int>(y) + phase_y) / period) % 2 == 1;
            const bool col = ((static_cast<int>(x) + phase_x) / period) % 2 == 1;
            const bool on = cls == 0 ? row != col : cls == 1 ? row : col;
            for (std::size_t c = 0; c < 3; ++c) {
                const int v = (on ? a[c] : b[c]) + noise(rng);
                img.at(y, x, c) = static_cast<std::uint8_t>(std::clamp(v, 0, 255));
            }
        }
    }
    return img;
}

}  // namespace

std::size_t generate_toy_dataset(const std::filesystem::path& root, const ToyDataOptions& opts) {
    std::mt19937_64 rng(opts.seed);
    std::size_t written = 0;
    for (const auto& [split, per_class] : {std::pair{"train", opts.train_per_class}, std::pair{"val", opts.val_per_class}}) {
        for (std::size_t cls = 0; cls < kClasses.size(); ++cls) {
            const std::filesystem::path dir = root / split / kClasses[cls];
            std::filesystem::create_directories(dir);
            for (std::size_t i = 0; i < per_class; ++i) {
                char name[32];
                std::snprintf(name, sizeof name, "%04zu.rgb", i);
                write_raw_image(make_pattern(cls, opts.size, rng), dir / name);
                ++written;
            }
        }
    }
    return written;
}

}  // namespace msshare
