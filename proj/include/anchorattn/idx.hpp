#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "anchorattn/matrix.hpp"

namespace anchorattn::idx {

inline constexpr std::uint32_t kImageMagic = 0x00000803;  // 3-D uint8 tensor
inline constexpr std::uint32_t kLabelMagic = 0x00000801;  // 1-D uint8 vector

struct ImageSet {
    std::size_t count = 0, height = 0, width = 0;
    std::vector<std::uint8_t> pixels;  // count*height*width, row-major per image
};

namespace detail {

inline std::uint32_t read_u32_be(std::istream& in, const std::string& path,
                                 std::size_t offset) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) {
        throw ParseError(path + ": truncated at byte offset " + std::to_string(offset));
    }
    return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
           (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

inline void write_u32_be(std::ostream& out, std::uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                                static_cast<unsigned char>(v >> 16),
                                static_cast<unsigned char>(v >> 8),
                                static_cast<unsigned char>(v)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

}  // namespace detail

inline ImageSet read_images(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError(path + ": cannot open");
    const std::uint32_t magic = detail::read_u32_be(in, path, 0);
    if (magic != kImageMagic) {
        throw ParseError(path + ": bad image magic at byte offset 0 (got " +
                         std::to_string(magic) + ")");
    }
    ImageSet set;
    set.count = detail::read_u32_be(in, path, 4);
    set.height = detail::read_u32_be(in, path, 8);
    set.width = detail::read_u32_be(in, path, 12);
    set.pixels.resize(set.count * set.height * set.width);
    in.read(reinterpret_cast<char*>(set.pixels.data()),
            static_cast<std::streamsize>(set.pixels.size()));
    if (static_cast<std::size_t>(in.gcount()) != set.pixels.size()) {
        throw ParseError(path + ": truncated at byte offset " +
                         std::to_string(16 + in.gcount()));
    }
    return set;
}

inline std::vector<std::uint8_t> read_labels(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError(path + ": cannot open");
    const std::uint32_t magic = detail::read_u32_be(in, path, 0);
    if (magic != kLabelMagic) {
        throw ParseError(path + ": bad label magic at byte offset 0 (got " +
                         std::to_string(magic) + ")");
    }
    const std::uint32_t count = detail::read_u32_be(in, path, 4);
    std::vector<std::uint8_t> labels(count);
    in.read(reinterpret_cast<char*>(labels.data()), count);
    if (static_cast<std::size_t>(in.gcount()) != labels.size()) {
        throw ParseError(path + ": truncated at byte offset " +
                         std::to_string(8 + in.gcount()));
    }
    return labels;
}

inline void write_images(const std::string& path, const ImageSet& set) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ParseError(path + ": cannot open for writing");
    detail::write_u32_be(out, kImageMagic);
    detail::write_u32_be(out, static_cast<std::uint32_t>(set.count));
    detail::write_u32_be(out, static_cast<std::uint32_t>(set.height));
    detail::write_u32_be(out, static_cast<std::uint32_t>(set.width));
    out.write(reinterpret_cast<const char*>(set.pixels.data()),
              static_cast<std::streamsize>(set.pixels.size()));
}

inline void write_labels(const std::string& path, const std::vector<std::uint8_t>& labels) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ParseError(path + ": cannot open for writing");
    detail::write_u32_be(out, kLabelMagic);
    detail::write_u32_be(out, static_cast<std::uint32_t>(labels.size()));
    out.write(reinterpret_cast<const char*>(labels.data()),
              static_cast<std::streamsize>(labels.size()));
}

// Splits one image into non-overlapping patch tokens (remainder rows and
// columns cropped); pixel values scaled to [0, 1].
inline Matrix patchify(const ImageSet& set, std::size_t image, std::size_t patch) {
    if (patch == 0 || patch > set.height || patch > set.width) {
        throw ArgumentError("patch size " + std::to_string(patch) +
                            " does not fit image " + std::to_string(set.height) + "x" +
                            std::to_string(set.width));
    }
    const std::size_t ph = set.height / patch, pw = set.width / patch;
    Matrix tokens(ph * pw, patch * patch);
    const std::uint8_t* img = set.pixels.data() + image * set.height * set.width;
    for (std::size_t ty = 0; ty < ph; ++ty) {
        for (std::size_t tx = 0; tx < pw; ++tx) {
            for (std::size_t y = 0; y < patch; ++y) {
                for (std::size_t x = 0; x < patch; ++x) {
                    tokens(ty * pw + tx, y * patch + x) =
                        img[(ty * patch + y) * set.width + (tx * patch + x)] / 255.0;
                }
            }
        }
    }
    return tokens;
}

}  // namespace anchorattn::idx
