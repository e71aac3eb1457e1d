#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <fstream>
#include <string>

#include "anchorattn/idx.hpp"
#include "anchorattn/linalg.hpp"

using namespace anchorattn;

namespace {

struct TempFile {
    std::string path;
    explicit TempFile(const std::string& name) : path("/tmp/anchorattn_test_" + name) {}
    ~TempFile() { std::remove(path.c_str()); }
};

}  // namespace

TEST_CASE("all-zero single-image fixture") {
    TempFile f("zero.idx");
    idx::ImageSet set;
    set.count = 1;
    set.height = 28;
    set.width = 28;
    set.pixels.assign(28 * 28, 0);
    idx::write_images(f.path, set);

    idx::ImageSet loaded = idx::read_images(f.path);
    CHECK(loaded.count == 1);
    CHECK(loaded.height == 28);
    CHECK(loaded.width == 28);
    Matrix tokens = idx::patchify(loaded, 0, 7);
    CHECK(tokens.shape() == Shape{16, 49});
    CHECK(max_abs(tokens) == 0.0);
}

TEST_CASE("hand-set pixels land at the expected token positions") {
    TempFile f("pixels.idx");
    idx::ImageSet set;
    set.count = 1;
    set.height = 4;
    set.width = 4;
    set.pixels.assign(16, 0);
    set.pixels[0] = 255;          // (0,0) -> token 0, offset 0
    set.pixels[3] = 51;           // (0,3) -> token 1, offset 1
    set.pixels[5] = 102;          // (1,1) -> token 0, offset 3
    set.pixels[15] = 204;         // (3,3) -> token 3, offset 3
    idx::write_images(f.path, set);

    Matrix tokens = idx::patchify(idx::read_images(f.path), 0, 2);
    REQUIRE(tokens.shape() == Shape{4, 4});
    CHECK(tokens(0, 0) == 1.0);
    CHECK(tokens(1, 1) == Catch::Approx(51.0 / 255.0));
    CHECK(tokens(0, 3) == Catch::Approx(102.0 / 255.0));
    CHECK(tokens(3, 3) == Catch::Approx(204.0 / 255.0));
}

TEST_CASE("image and label round trips are identical") {
    TempFile fi("roundtrip_img.idx");
    TempFile fl("roundtrip_lbl.idx");
    Rng rng(1);
    idx::ImageSet set;
    set.count = 5;
    set.height = 6;
    set.width = 7;
    for (std::size_t i = 0; i < set.count * set.height * set.width; ++i) {
        set.pixels.push_back(static_cast<std::uint8_t>(rng.index(256)));
    }
    std::vector<std::uint8_t> labels;
    for (std::size_t i = 0; i < set.count; ++i) {
        labels.push_back(static_cast<std::uint8_t>(rng.index(10)));
    }
    idx::write_images(fi.path, set);
    idx::write_labels(fl.path, labels);

    idx::ImageSet loaded = idx::read_images(fi.path);
    CHECK(loaded.pixels == set.pixels);
    CHECK(loaded.height == set.height);
    CHECK(idx::read_labels(fl.path) == labels);
}

TEST_CASE("bad magic reports the byte offset") {
    TempFile f("badmagic.idx");
    std::ofstream out(f.path, std::ios::binary);
    const char junk[8] = {0x12, 0x34, 0x56, 0x78, 0, 0, 0, 0};
    out.write(junk, 8);
    out.close();
    CHECK_THROWS_MATCHES(idx::read_images(f.path), ParseError,
                         Catch::Matchers::MessageMatches(
                             Catch::Matchers::ContainsSubstring("byte offset 0")));
}

TEST_CASE("truncated pixel payload reports an offset") {
    TempFile f("truncated.idx");
    std::ofstream out(f.path, std::ios::binary);
    const unsigned char header[16] = {0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 4, 0, 0, 0, 4};
    out.write(reinterpret_cast<const char*>(header), 16);
    out.write("abc", 3);  // 3 of the 32 promised bytes
    out.close();
    CHECK_THROWS_MATCHES(idx::read_images(f.path), ParseError,
                         Catch::Matchers::MessageMatches(
                             Catch::Matchers::ContainsSubstring("truncated")));
}

TEST_CASE("patchify rejects oversized patches") {
    idx::ImageSet set;
    set.count = 1;
    set.height = 4;
    set.width = 4;
    set.pixels.assign(16, 0);
    CHECK_THROWS_AS(idx::patchify(set, 0, 5), ArgumentError);
    CHECK_THROWS_AS(idx::patchify(set, 0, 0), ArgumentError);
}
