#include "msshare/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace msshare {

namespace fs = std::filesystem;

std::vector<std::int32_t> Dataset::labels() const {
    std::vector<std::int32_t> out;
    out.reserve(samples.size());
    for (const Sample& s : samples) out.push_back(s.label);
    return out;
}

namespace {

bool is_image_file(const fs::path& p) {
    const std::string ext = p.extension().string();
    return ext == ".rgb" || ext == ".ppm";
}

std::vector<fs::path> sorted_entries(const fs::path& dir, bool directories) {
    std::vector<fs::path> out;
    for (const fs::directory_entry& e : fs::directory_iterator(dir)) {
        if (e.path().filename().string().starts_with('.')) continue;
        if (directories ? e.is_directory() : (e.is_regular_file() && is_image_file(e.path()))) out.push_back(e.path());
    }
    std::sort(out.begin(), out.end(), [](const fs::path& a, const fs::path& b) {
        return a.filename().string() < b.filename().string();
    });
    return out;
}

}  // namespace

Dataset load_dataset(const fs::path& root, Split split) {
    fs::path dir = root;
    const fs::path split_dir = root / (split == Split::train ? "train" : "val");
    if (fs::is_directory(split_dir)) dir = split_dir;
    if (!fs::is_directory(dir)) throw std::runtime_error("dataset root " + dir.string() + " is not a directory");

    Dataset ds;
    ds.split = split;
    const std::vector<fs::path> classes = sorted_entries(dir, true);
    if (classes.empty()) throw std::runtime_error("dataset root " + dir.string() + " has no class directories");
    for (std::size_t label = 0; label < classes.size(); ++label) {
        ds.class_names.push_back(classes[label].filename().string());
        const std::vector<fs::path> files = sorted_entries(classes[label], false);
        if (files.empty()) throw std::runtime_error("class directory " + classes[label].string() + " is empty");
        for (const fs::path& f : files) {
            ds.samples.push_back(Sample{read_image(f), static_cast<std::int32_t>(label), f.string()});
        }
    }
    return ds;
}

PreprocessConfig PreprocessConfig::from_config(const KeyValueConfig& cfg) {
    PreprocessConfig p;
    p.resize = static_cast<std::size_t>(cfg.get_int("resize", static_cast<long long>(p.resize)));
    p.crop = static_cast<std::size_t>(cfg.get_int("crop", static_cast<long long>(p.crop)));
    const auto read3 = [&](const char* key, std::array<double, 3>& dst) {
        const std::vector<double> v = cfg.get_doubles(key, {dst[0], dst[1], dst[2]});
        if (v.size() != 3) throw std::invalid_argument(std::string("config: ") + key + " needs three values");
        std::copy(v.begin(), v.end(), dst.begin());
    };
    read3("mean", p.mean);
    read3("std", p.std);
    for (double s : p.std) {
        if (!(s > 0)) throw std::invalid_argument("config: std values must be positive");
    }
    if (p.crop == 0 || p.crop > p.resize) throw std::invalid_argument("config: need 0 < crop <= resize");
    return p;
}

Image resize_bilinear(const Image& img, std::size_t out_h, std::size_t out_w) {
    if (out_h == img.height && out_w == img.width) return img;
    Image out(out_h, out_w);
    const double sy = static_cast<double>(img.height) / static_cast<double>(out_h);
    const double sx = static_cast<double>(img.width) / static_cast<double>(out_w);
    const auto source = [](std::size_t dst, double scale, std::size_t extent, std::size_t& i0, std::size_t& i1,
                           double& frac) {
        double s = (static_cast<double>(dst) + 0.5) * scale - 0.5;
        s = std::clamp(s, 0.0, static_cast<double>(extent - 1));
        i0 = static_cast<std::size_t>(s);
        i1 = std::min(i0 + 1, extent - 1);
        frac = s - static_cast<double>(i0);
    };
    for (std::size_t y = 0; y < out_h; ++y) {
        std::size_t y0, y1;
        double fy;
        source(y, sy, img.height, y0, y1, fy);
        for (std::size_t x = 0; x < out_w; ++x) {
            std::size_t x0, x1;
            double fx;
            source(x, sx, img.width, x0, x1, fx);
            for (std::size_t c = 0; c < 3; ++c) {
                const double top = img.at(y0, x0, c) * (1 - fx) + img.at(y0, x1, c) * fx;
                const double bottom = img.at(y1, x0, c) * (1 - fx) + img.at(y1, x1, c) * fx;
                out.at(y, x, c) = static_cast<std::uint8_t>(std::lround(top * (1 - fy) + bottom * fy));
            }
        }
    }
    return out;
}

Image resize_shorter_side(const Image& img, std::size_t target) {
    if (img.height == 0 || img.width == 0) throw std::invalid_argument("resize: empty image");
    const bool tall = img.height >= img.width;
    const std::size_t shorter = tall ? img.width : img.height;
    const std::size_t longer = tall ? img.height : img.width;
    const auto scaled = static_cast<std::size_t>(
        std::llround(static_cast<double>(longer) * static_cast<double>(target) / static_cast<double>(shorter)));
    return tall ? resize_bilinear(img, scaled, target) : resize_bilinear(img, target, scaled);
}

void preprocess_into(const Image& img, Split split, const PreprocessConfig& cfg, std::mt19937_64& rng, Tensor& batch,
                     std::size_t index) {
    const Image resized = resize_shorter_side(img, cfg.resize);
    if (resized.height < cfg.crop || resized.width < cfg.crop) {
        throw std::invalid_argument("preprocess: image " + std::to_string(resized.height) + "x" +
                                    std::to_string(resized.width) + " smaller than crop " + std::to_string(cfg.crop));
    }
    const Shape& s = batch.shape();
    if (s.c != 3 || s.h != cfg.crop || s.w != cfg.crop || index >= s.n) {
        throw std::invalid_argument("preprocess: batch tensor " + s.str() + " does not fit the crop");
    }
    std::size_t top = (resized.height - cfg.crop) / 2;
    std::size_t left = (resized.width - cfg.crop) / 2;
    bool flip = false;
    if (split == Split::train) {
        top = static_cast<std::size_t>(rng() % (resized.height - cfg.crop + 1));
        left = static_cast<std::size_t>(rng() % (resized.width - cfg.crop + 1));
        flip = (rng() & 1u) != 0;
    }
    for (std::size_t c = 0; c < 3; ++c) {
        const double mean = cfg.mean[c];
        const double inv_std = 1.0 / cfg.std[c];
        float* plane = batch.data() + batch.offset(index, c, 0, 0);
        for (std::size_t y = 0; y < cfg.crop; ++y) {
            for (std::size_t x = 0; x < cfg.crop; ++x) {
                const std::size_t sx = flip ? left + cfg.crop - 1 - x : left + x;
                const double v = resized.at(top + y, sx, c) / 255.0;
                plane[y * cfg.crop + x] = static_cast<float>((v - mean) * inv_std);
            }
        }
    }
}

Tensor preprocess(const Image& img, Split split, const PreprocessConfig& cfg, std::mt19937_64& rng) {
    Tensor out(Shape{1, 3, cfg.crop, cfg.crop});
    preprocess_into(img, split, cfg, rng, out, 0);
    return out;
}

Tensor unnormalize(const Tensor& t, const PreprocessConfig& cfg) {
    Tensor out(t.shape());
    const Shape& s = t.shape();
    for (std::size_t n = 0; n < s.n; ++n) {
        for (std::size_t c = 0; c < s.c; ++c) {
            const std::size_t base = t.offset(n, c, 0, 0);
            for (std::size_t i = 0; i < s.h * s.w; ++i) {
                out[base + i] = static_cast<float>(t[base + i] * cfg.std[c % 3] + cfg.mean[c % 3]);
            }
        }
    }
    return out;
}

std::mt19937_64 sample_rng(std::uint64_t seed, std::uint64_t epoch, std::uint64_t index) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(index),
                      static_cast<std::uint32_t>(index >> 32)};
    return std::mt19937_64(seq);
}

}  // namespace msshare
