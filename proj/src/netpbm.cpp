#include "milfcn/netpbm.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <stdexcept>
#include <string>

#include "milfcn/errors.hpp"

namespace milfcn {

namespace {

std::uint8_t quantize(double v) {
    // rounding half-up onto 0..255
    return static_cast<std::uint8_t>(std::floor(v * 255.0 + 0.5));
}

void append_header(std::vector<std::uint8_t>& out, const char* magic, int w, int h) {
    const std::string header = std::string(magic) + "\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
    out.insert(out.end(), header.begin(), header.end());
}

struct Parser {
    const std::vector<std::uint8_t>& bytes;
    std::size_t pos = 0;

    [[noreturn]] void fail(const std::string& what) const {
        throw IoError("netpbm: " + what + " at byte offset " + std::to_string(pos));
    }

    void expect_magic(const char* magic) {
        if (bytes.size() < 2) {
            fail("missing magic");
        }
        if (bytes[0] != static_cast<std::uint8_t>(magic[0]) || bytes[1] != static_cast<std::uint8_t>(magic[1])) {
            const std::string got = {static_cast<char>(bytes[0]), static_cast<char>(bytes[1])};
            throw IoError(std::string("netpbm: expected type ") + magic + ", got \"" + got +
                          "\" at byte offset 0");
        }
        pos = 2;
    }

    int read_int() {
        while (pos < bytes.size() && std::isspace(bytes[pos])) {
            ++pos;
        }
        if (pos >= bytes.size() || !std::isdigit(bytes[pos])) {
            fail("expected a decimal header field");
        }
        long v = 0;
        while (pos < bytes.size() && std::isdigit(bytes[pos])) {
            v = v * 10 + (bytes[pos] - '0');
            if (v > 1 << 24) {
                fail("header field out of range");
            }
            ++pos;
        }
        return static_cast<int>(v);
    }

    // single whitespace byte separating the header from the payload
    void skip_payload_separator() {
        if (pos >= bytes.size() || !std::isspace(bytes[pos])) {
            fail("missing whitespace before payload");
        }
        ++pos;
    }

    const std::uint8_t* payload(std::size_t n) {
        if (bytes.size() - pos < n) {
            pos = bytes.size();
            fail("payload truncated, expected " + std::to_string(n) + " bytes");
        }
        return bytes.data() + pos;
    }
};

void check_dims(int w, int h, std::size_t pos) {
    if (w <= 0 || h <= 0) {
        throw IoError("netpbm: non-positive dimensions at byte offset " + std::to_string(pos));
    }
}

}  // namespace

std::vector<std::uint8_t> encode_ppm(const Tensor& image) {
    if (!image.defined() || image.rank() != 3 || image.shape()[0] != 3) {
        throw std::invalid_argument("encode_ppm: image must be [3,H,W]");
    }
    const int h = image.shape()[1];
    const int w = image.shape()[2];
    const double* v = image.data();
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    for (std::size_t i = 0; i < 3 * plane; ++i) {
        if (!(v[i] >= 0.0 && v[i] <= 1.0)) {
            throw std::invalid_argument("encode_ppm: values must lie in [0,1]");
        }
    }

    std::vector<std::uint8_t> out;
    out.reserve(32 + 3 * plane);
    append_header(out, "P6", w, h);
    for (std::size_t i = 0; i < plane; ++i) {
        out.push_back(quantize(v[i]));
        out.push_back(quantize(v[plane + i]));
        out.push_back(quantize(v[2 * plane + i]));
    }
    return out;
}

Tensor decode_ppm(const std::vector<std::uint8_t>& bytes) {
    Parser p{bytes};
    p.expect_magic("P6");
    const int w = p.read_int();
    const int h = p.read_int();
    check_dims(w, h, p.pos);
    const int maxval = p.read_int();
    if (maxval != 255) {
        throw IoError("netpbm: unsupported maxval " + std::to_string(maxval) + " at byte offset " +
                      std::to_string(p.pos));
    }
    p.skip_payload_separator();

    const std::size_t plane = static_cast<std::size_t>(h) * w;
    const std::uint8_t* raw = p.payload(3 * plane);
    Tensor image = Tensor::zeros({3, h, w});
    double* v = image.data();
    for (std::size_t i = 0; i < plane; ++i) {
        v[i] = raw[3 * i] / 255.0;
        v[plane + i] = raw[3 * i + 1] / 255.0;
        v[2 * plane + i] = raw[3 * i + 2] / 255.0;
    }
    return image;
}

std::vector<std::uint8_t> encode_pgm(const Mask& mask) {
    if (mask.h <= 0 || mask.w <= 0) {
        throw std::invalid_argument("encode_pgm: empty mask");
    }
    std::vector<std::uint8_t> out;
    out.reserve(32 + mask.pixels());
    append_header(out, "P5", mask.w, mask.h);
    out.insert(out.end(), mask.ids.begin(), mask.ids.end());
    return out;
}

Mask decode_pgm(const std::vector<std::uint8_t>& bytes) {
    Parser p{bytes};
    p.expect_magic("P5");
    const int w = p.read_int();
    const int h = p.read_int();
    check_dims(w, h, p.pos);
    const int maxval = p.read_int();
    if (maxval != 255) {
        throw IoError("netpbm: unsupported maxval " + std::to_string(maxval) + " at byte offset " +
                      std::to_string(p.pos));
    }
    p.skip_payload_separator();

    Mask mask(h, w);
    const std::uint8_t* raw = p.payload(mask.pixels());
    std::copy(raw, raw + mask.pixels(), mask.ids.begin());
    return mask;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open " + path.string());
    }
    std::vector<std::uint8_t> bytes;
    in.seekg(0, std::ios::end);
    bytes.resize(static_cast<std::size_t>(in.tellg()));
    in.seekg(0, std::ios::beg);
    in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!in) {
        throw IoError("failed to read " + path.string());
    }
    return bytes;
}

void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot open " + path.string() + " for writing");
    }
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) {
        throw IoError("failed to write " + path.string());
    }
}

}  // namespace milfcn
