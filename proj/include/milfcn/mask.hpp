#pragma once

#include <cstdint>
#include <vector>

namespace milfcn {

// Per-pixel class indices, row-major. Class 0 is background everywhere in the
// system; indices stay under 256 so a mask maps 1:1 onto a PGM payload.
struct Mask {
    int h = 0;
    int w = 0;
    std::vector<std::uint8_t> ids;

    Mask() = default;
    Mask(int height, int width) : h(height), w(width), ids(static_cast<std::size_t>(height) * width, 0) {}

    std::uint8_t at(int y, int x) const { return ids[static_cast<std::size_t>(y) * w + x]; }
    void set(int y, int x, std::uint8_t id) { ids[static_cast<std::size_t>(y) * w + x] = id; }
    std::size_t pixels() const { return ids.size(); }

    bool operator==(const Mask& o) const { return h == o.h && w == o.w && ids == o.ids; }
};

}  // namespace milfcn
