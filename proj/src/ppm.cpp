#include "bem/ppm.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <string>

#include "bem/error.hpp"

namespace bem {

namespace {

class HeaderReader {
  public:
    explicit HeaderReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

    std::size_t offset() const { return pos_; }

    // Skips whitespace and '#' comments, then reads a decimal field.
    std::size_t number(const char* field) {
        skip_space_and_comments();
        const std::size_t start = pos_;
        std::size_t value = 0;
        while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
            value = value * 10 + (bytes_[pos_] - '0');
            if (value > 1'000'000'000) fail(std::string("value of ") + field + " too large", start);
            ++pos_;
        }
        if (pos_ == start) fail(std::string("expected ") + field, start);
        return value;
    }

    void single_whitespace() {
        if (pos_ >= bytes_.size() || !std::isspace(bytes_[pos_])) fail("expected whitespace after maxval", pos_);
        ++pos_;
    }

    [[noreturn]] static void fail(const std::string& what, std::size_t at) {
        throw ParseError("ppm: " + what + " at byte offset " + std::to_string(at));
    }

  private:
    void skip_space_and_comments() {
        while (pos_ < bytes_.size()) {
            if (std::isspace(bytes_[pos_])) {
                ++pos_;
            } else if (bytes_[pos_] == '#') {
                while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
            } else {
                break;
            }
        }
    }

    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 2;
};

std::uint8_t quantize(double v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

}  // namespace

std::vector<std::uint8_t> encode_ppm(const Tensor& img) {
    expect_rank(img, 3, "encode_ppm");
    const std::size_t c = img.dim(0), h = img.dim(1), w = img.dim(2);
    if (c != 3 && c != 1) throw DimensionError("encode_ppm supports 1 or 3 channels, got " + shape_to_string(img.shape()));
    const std::string header =
        std::string(c == 3 ? "P6" : "P5") + "\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
    std::vector<std::uint8_t> out(header.begin(), header.end());
    out.reserve(header.size() + c * h * w);
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            for (std::size_t ch = 0; ch < c; ++ch) out.push_back(quantize(img.at(ch, y, x)));
        }
    }
    return out;
}

Tensor decode_ppm(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '6' && bytes[1] != '5')) {
        HeaderReader::fail("missing P6/P5 magic", 0);
    }
    const std::size_t channels = bytes[1] == '6' ? 3 : 1;
    HeaderReader reader(bytes);
    const std::size_t width = reader.number("width");
    const std::size_t height = reader.number("height");
    const std::size_t maxval_at = reader.offset();
    const std::size_t maxval = reader.number("maxval");
    if (width == 0 || height == 0) HeaderReader::fail("zero image dimension", maxval_at);
    if (maxval == 0) HeaderReader::fail("maxval must be positive", maxval_at);
    if (maxval > 255) {
        throw ParseError("ppm: unsupported depth, maxval " + std::to_string(maxval) +
                         " needs 16-bit samples (only 8-bit is supported) at byte offset " +
                         std::to_string(maxval_at));
    }
    reader.single_whitespace();
    const std::size_t payload = channels * width * height;
    const std::size_t start = reader.offset();
    if (bytes.size() - start < payload) {
        throw ParseError("ppm: truncated payload, expected " + std::to_string(payload) + " bytes, found " +
                         std::to_string(bytes.size() - start) + " at byte offset " + std::to_string(start));
    }
    Tensor img({channels, height, width});
    const double scale = 1.0 / static_cast<double>(maxval);
    std::size_t p = start;
    for (std::size_t y = 0; y < height; ++y) {
        for (std::size_t x = 0; x < width; ++x) {
            for (std::size_t ch = 0; ch < channels; ++ch) {
                const std::uint8_t b = bytes[p];
                if (b > maxval) HeaderReader::fail("sample exceeds maxval", p);
                img.at(ch, y, x) = static_cast<double>(b) * scale;
                ++p;
            }
        }
    }
    return img;
}

void write_ppm(const std::filesystem::path& path, const Tensor& img) {
    const auto bytes = encode_ppm(img);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for " + path.string());
}

Tensor read_ppm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    try {
        return decode_ppm(bytes);
    } catch (const ParseError& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
}

}  // namespace bem
