#include "msshare/image.hpp"

#include <cctype>
#include <cstring>
#include <fstream>
#include <iterator>
#include <stdexcept>
#include <string>

namespace msshare {
namespace {

constexpr char kRawMagic[4] = {'R', 'G', 'B', '8'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::uint8_t* p) {
    return std::uint32_t{p[0]} | std::uint32_t{p[1]} << 8 | std::uint32_t{p[2]} << 16 | std::uint32_t{p[3]} << 24;
}

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("write failed for " + path.string());
}

/// Parses the whitespace/comment separated header fields of a PNM file.
class PnmHeader {
public:
    PnmHeader(const std::vector<std::uint8_t>& bytes, const std::filesystem::path& path)
        : bytes_(bytes), path_(path), pos_(2) {}

    std::size_t next_number() {
        skip_space();
        std::size_t value = 0;
        bool any = false;
        while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
            value = value * 10 + (bytes_[pos_++] - '0');
            any = true;
            if (value > (1u << 24)) fail("header value too large");
        }
        if (!any) fail("malformed header");
        return value;
    }
    /// Exactly one whitespace byte separates the header from the payload.
    std::size_t payload_offset() {
        if (pos_ >= bytes_.size() || !std::isspace(bytes_[pos_])) fail("malformed header");
        return pos_ + 1;
    }
    [[noreturn]] void fail(const std::string& what) const {
        throw std::runtime_error(path_.string() + ": " + what);
    }

private:
    void skip_space() {
        while (pos_ < bytes_.size()) {
            if (bytes_[pos_] == '#') {
                while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
            } else if (std::isspace(bytes_[pos_])) {
                ++pos_;
            } else {
                break;
            }
        }
    }

    const std::vector<std::uint8_t>& bytes_;
    const std::filesystem::path& path_;
    std::size_t pos_;
};

}  // namespace

void write_raw_image(const Image& img, const std::filesystem::path& path) {
    std::vector<std::uint8_t> bytes(std::begin(kRawMagic), std::end(kRawMagic));
    put_u32(bytes, static_cast<std::uint32_t>(img.width));
    put_u32(bytes, static_cast<std::uint32_t>(img.height));
    bytes.insert(bytes.end(), img.rgb.begin(), img.rgb.end());
    write_bytes(path, bytes);
}

void write_ppm(const Image& img, const std::filesystem::path& path) {
    const std::string header = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
    std::vector<std::uint8_t> bytes(header.begin(), header.end());
    bytes.insert(bytes.end(), img.rgb.begin(), img.rgb.end());
    write_bytes(path, bytes);
}

Image read_image(const std::filesystem::path& path) {
    const std::vector<std::uint8_t> bytes = read_bytes(path);
    if (bytes.size() >= 12 && std::memcmp(bytes.data(), kRawMagic, 4) == 0) {
        const std::size_t width = get_u32(bytes.data() + 4);
        const std::size_t height = get_u32(bytes.data() + 8);
        if (width == 0 || height == 0) throw std::runtime_error(path.string() + ": zero image extent");
        const std::size_t payload = width * height * 3;
        if (bytes.size() - 12 != payload) {
            throw std::runtime_error(path.string() + ": truncated payload, expected " + std::to_string(payload) +
                                     " bytes, found " + std::to_string(bytes.size() - 12));
        }
        Image img(height, width);
        std::memcpy(img.rgb.data(), bytes.data() + 12, payload);
        return img;
    }
    if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '6') {
        PnmHeader header(bytes, path);
        const std::size_t width = header.next_number();
        const std::size_t height = header.next_number();
        const std::size_t maxval = header.next_number();
        if (maxval != 255) header.fail("only maxval 255 is supported");
        if (width == 0 || height == 0) header.fail("zero image extent");
        const std::size_t offset = header.payload_offset();
        const std::size_t payload = width * height * 3;
        if (bytes.size() - offset < payload) header.fail("truncated payload");
        Image img(height, width);
        std::memcpy(img.rgb.data(), bytes.data() + offset, payload);
        return img;
    }
    throw std::runtime_error(path.string() + ": unrecognized image format");
}

void write_pgm(const GrayImage& img, const std::filesystem::path& path, const std::vector<std::string>& comments) {
    std::string header = "P5\n";
    for (const std::string& c : comments) header += "# " + c + "\n";
    header += std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
    std::vector<std::uint8_t> bytes(header.begin(), header.end());
    bytes.insert(bytes.end(), img.pixels.begin(), img.pixels.end());
    write_bytes(path, bytes);
}

GrayImage read_pgm(const std::filesystem::path& path) {
    const std::vector<std::uint8_t> bytes = read_bytes(path);
    if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') {
        throw std::runtime_error(path.string() + ": not a binary PGM");
    }
    PnmHeader header(bytes, path);
    GrayImage img;
    img.width = header.next_number();
    img.height = header.next_number();
    if (header.next_number() != 255) header.fail("only maxval 255 is supported");
    const std::size_t offset = header.payload_offset();
    if (bytes.size() - offset < img.width * img.height) header.fail("truncated payload");
    img.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(offset),
                      bytes.begin() + static_cast<std::ptrdiff_t>(offset + img.width * img.height));
    return img;
}

}  // namespace msshare
