#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace msshare {

/// 8-bit RGB image, interleaved in row-major (y, x, channel) order.
struct Image {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<std::uint8_t> rgb;

    Image() = default;
    Image(std::size_t h, std::size_t w, std::uint8_t fill = 0) : height(h), width(w), rgb(h * w * 3, fill) {}

    std::uint8_t& at(std::size_t y, std::size_t x, std::size_t c) { return rgb[(y * width + x) * 3 + c]; }
    std::uint8_t at(std::size_t y, std::size_t x, std::size_t c) const { return rgb[(y * width + x) * 3 + c]; }

    friend bool operator==(const Image&, const Image&) = default;
};

/// Raw container (".rgb"): 4-byte magic "RGB8", u32 LE width, u32 LE height,
/// then width*height*3 bytes.
void write_raw_image(const Image& img, const std::filesystem::path& path);
/// Binary PPM (P6, maxval 255).
void write_ppm(const Image& img, const std::filesystem::path& path);

/// Reads either format, chosen by the leading magic. Throws std::runtime_error
/// naming the file on a malformed or truncated payload.
Image read_image(const std::filesystem::path& path);

/// 8-bit grayscale image written as binary PGM (P5) with optional header comment lines.
struct GrayImage {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<std::uint8_t> pixels;
};

void write_pgm(const GrayImage& img, const std::filesystem::path& path, const std::vector<std::string>& comments = {});
GrayImage read_pgm(const std::filesystem::path& path);

}  // namespace msshare
