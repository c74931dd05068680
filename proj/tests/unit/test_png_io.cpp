#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "confmask/png_io.hpp"
#include "confmask/synth.hpp"

using namespace confmask;
namespace fs = std::filesystem;

namespace {

fs::path tmp_dir() {
    const fs::path dir = "tmp_png_io";
    fs::create_directories(dir);
    return dir;
}

std::string read_bytes(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    REQUIRE(f.good());
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

PlanarImage random_image(int w, int h, int c, std::uint64_t index) {
    CounterRng rng(31, detail::fnv1a64("png-test"), index);
    PlanarImage img(w, h, c);
    for (float& v : img.values()) v = static_cast<float>(rng.uniform());
    return img;
}

} // namespace

TEST_CASE("8-bit round trip quantizes once and is then lossless") {
    const fs::path p = tmp_dir() / "rgb8.png";
    const PlanarImage img = random_image(9, 5, 3, 0);
    save_png(img, p.string(), 8);
    const PlanarImage back = load_png(p.string());
    REQUIRE(back.same_shape(img));
    for (std::size_t i = 0; i < img.values().size(); ++i) {
        const float orig = img.values()[i];
        const float got = back.values()[i];
        // Loaded value is the nearest 8-bit level of the original...
        CHECK_THAT(got, Catch::Matchers::WithinAbs(orig, 0.5 / 255.0 + 1e-7));
        // ...and exactly a k/255 level.
        const float level = static_cast<float>(std::lround(got * 255.0) / 255.0);
        CHECK(got == level);
    }
    // Saving the already-quantized image reproduces the file byte for byte.
    const fs::path p2 = tmp_dir() / "rgb8_again.png";
    save_png(back, p2.string(), 8);
    CHECK(read_bytes(p) == read_bytes(p2));
}

TEST_CASE("16-bit round trip preserves 16-bit levels exactly") {
    const fs::path p = tmp_dir() / "rgb16.png";
    PlanarImage img(4, 3, 3);
    std::uint32_t k = 0;
    for (float& v : img.values()) v = static_cast<float>((k++ * 5461) % 65536) / 65535.0f;
    save_png(img, p.string(), 16);
    const PlanarImage back = load_png(p.string());
    REQUIRE(back.same_shape(img));
    for (std::size_t i = 0; i < img.values().size(); ++i) {
        const double orig = img.values()[i];
        const double got = back.values()[i];
        CHECK(std::lround(orig * 65535.0) == std::lround(got * 65535.0));
        CHECK_THAT(got, Catch::Matchers::WithinAbs(orig, 1e-6));
    }
}

TEST_CASE("grayscale images round trip at both depths") {
    for (int depth : {8, 16}) {
        const fs::path p = tmp_dir() / ("gray" + std::to_string(depth) + ".png");
        const PlanarImage img = random_image(6, 4, 1, static_cast<std::uint64_t>(depth));
        save_png(img, p.string(), depth);
        const PlanarImage back = load_png(p.string());
        REQUIRE(back.channels() == 1);
        REQUIRE(back.same_shape(img));
        const double step = depth == 8 ? 255.0 : 65535.0;
        for (std::size_t i = 0; i < img.values().size(); ++i)
            CHECK_THAT(back.values()[i],
                       Catch::Matchers::WithinAbs(img.values()[i], 0.5 / step + 1e-7));
    }
}

TEST_CASE("text chunks survive the round trip") {
    const fs::path p = tmp_dir() / "text.png";
    const PlanarImage img = random_image(3, 3, 3, 7);
    save_png(img, p.string(), 8, {{"purpose", "unit-test"}, {"index", "42"}});
    std::vector<PngTextChunk> text;
    load_png(p.string(), &text);
    bool saw_purpose = false, saw_index = false;
    for (const auto& t : text) {
        if (t.key == "purpose" && t.value == "unit-test") saw_purpose = true;
        if (t.key == "index" && t.value == "42") saw_index = true;
    }
    CHECK(saw_purpose);
    CHECK(saw_index);
}

TEST_CASE("mask PNG round trip keeps polarity and advertises it in metadata") {
    const fs::path p = tmp_dir() / "mask.png";
    BinaryMask mask(5, 4);
    mask.set(0, 0, true);
    mask.set(4, 3, true);
    mask.set(2, 1, true);
    save_mask_png(mask, p.string());

    const BinaryMask back = load_mask_png(p.string());
    CHECK(back == mask);

    // 255 = trusted is written into the file itself.
    std::vector<PngTextChunk> text;
    const PlanarImage raw = load_png(p.string(), &text);
    bool saw_polarity = false;
    for (const auto& t : text)
        if (t.key == kMaskPolarityKey && t.value == kMaskPolarityValue) saw_polarity = true;
    CHECK(saw_polarity);
    CHECK(raw.at(0, 0, 0) == 1.0f);
    CHECK(raw.at(1, 0, 0) == 0.0f);
}

TEST_CASE("save_png validates range and load_png rejects non-PNG input") {
    PlanarImage img(1, 1, 1);
    img.at(0, 0, 0) = 1.5f;
    CHECK_THROWS_AS(save_png(img, (tmp_dir() / "bad.png").string(), 8),
                    std::invalid_argument);
    img.at(0, 0, 0) = 0.5f;
    CHECK_THROWS_AS(save_png(img, (tmp_dir() / "bad.png").string(), 12),
                    std::invalid_argument);

    const fs::path garbage = tmp_dir() / "garbage.png";
    std::ofstream(garbage, std::ios::binary) << "this is not a png";
    CHECK_THROWS(load_png(garbage.string()));
    CHECK_THROWS(load_png((tmp_dir() / "missing.png").string()));
}
