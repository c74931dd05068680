#include <catch2/catch_amalgamated.hpp>

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "confmask/cfm_io.hpp"
#include "confmask/fidelity.hpp"
#include "confmask/score.hpp"
#include "confmask/synth.hpp"

using namespace confmask;
namespace fs = std::filesystem;

namespace {

fs::path tmp_dir() {
    const fs::path dir = "tmp_cfm_io";
    fs::create_directories(dir);
    return dir;
}

std::string read_bytes(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    REQUIRE(f.good());
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

void write_bytes(const fs::path& p, const std::string& bytes) {
    std::ofstream f(p, std::ios::binary | std::ios::trunc);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    REQUIRE(f.good());
}

// Independently assembled file image: magic, three little-endian u32 header
// fields, little-endian binary32 payload.
std::string golden_bytes(std::uint32_t w, std::uint32_t h, std::uint32_t c,
                         const std::vector<float>& vals) {
    std::string out = "CFM1";
    const auto put32 = [&out](std::uint32_t v) {
        for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    };
    put32(w);
    put32(h);
    put32(c);
    for (float v : vals) put32(std::bit_cast<std::uint32_t>(v));
    return out;
}

} // namespace

TEST_CASE("save_floatmap emits the documented byte layout") {
    const fs::path p = tmp_dir() / "golden.cfm";
    PlanarImage img(2, 1, 1);
    img.at(0, 0, 0) = 1.5f;
    img.at(1, 0, 0) = -2.25f;
    save_floatmap(img, p.string());
    CHECK(read_bytes(p) == golden_bytes(2, 1, 1, {1.5f, -2.25f}));
}

TEST_CASE("floatmap round trip is bit-exact for arbitrary finite floats") {
    const fs::path p = tmp_dir() / "roundtrip.cfm";
    CounterRng rng(99, detail::fnv1a64("cfm-test"), 0);
    PlanarImage img(7, 5, 3);
    for (float& v : img.values())
        v = static_cast<float>(rng.uniform(-1e6, 1e6));
    save_floatmap(img, p.string());
    const PlanarImage back = load_floatmap(p.string());
    REQUIRE(back.same_shape(img));
    const auto a = img.values();
    const auto b = back.values();
    for (std::size_t i = 0; i < a.size(); ++i)
        CHECK(std::bit_cast<std::uint32_t>(a[i]) == std::bit_cast<std::uint32_t>(b[i]));
}

TEST_CASE("typed floatmap round trip preserves ScoreMap and FidelityMap") {
    const fs::path p = tmp_dir() / "typed.cfm";
    const ScoreMap score = ScoreMap::from_values(2, 2, {0.0f, 0.5f, 1.25f, 3.5f});
    save_floatmap(score, p.string());
    const ScoreMap back = ScoreMap::from_planar(load_floatmap(p.string()));
    CHECK(back.same_shape(score));
    for (std::size_t i = 0; i < 4; ++i) CHECK(back.values()[i] == score.values()[i]);

    const FidelityMap fid = FidelityMap::from_values(1, 2, {0.0f, 3.0f});
    save_floatmap(fid, p.string());
    const FidelityMap fback = FidelityMap::from_planar(load_floatmap(p.string()));
    CHECK(fback.at(0, 1) == 3.0f);
}

TEST_CASE("load_floatmap rejects malformed files") {
    const fs::path dir = tmp_dir();

    write_bytes(dir / "short.cfm", "CFM1\x01");
    CHECK_THROWS_AS(load_floatmap((dir / "short.cfm").string()), std::runtime_error);

    write_bytes(dir / "magic.cfm", golden_bytes(1, 1, 1, {0.0f}).replace(0, 4, "XXM1"));
    CHECK_THROWS_AS(load_floatmap((dir / "magic.cfm").string()), std::runtime_error);

    // Header promises more samples than the payload carries.
    std::string truncated = golden_bytes(3, 1, 1, {0.0f, 0.0f, 0.0f});
    truncated.resize(truncated.size() - 4);
    write_bytes(dir / "trunc.cfm", truncated);
    CHECK_THROWS_AS(load_floatmap((dir / "trunc.cfm").string()), std::runtime_error);

    // Trailing garbage is also a size mismatch.
    std::string padded = golden_bytes(1, 1, 1, {0.0f}) + "zz";
    write_bytes(dir / "padded.cfm", padded);
    CHECK_THROWS_AS(load_floatmap((dir / "padded.cfm").string()), std::runtime_error);

    write_bytes(dir / "chan.cfm", golden_bytes(1, 1, 2, {0.0f, 0.0f}));
    CHECK_THROWS_AS(load_floatmap((dir / "chan.cfm").string()), std::runtime_error);

    write_bytes(dir / "zero.cfm", golden_bytes(0, 1, 1, {}));
    CHECK_THROWS_AS(load_floatmap((dir / "zero.cfm").string()), std::runtime_error);

    const float nan = std::numeric_limits<float>::quiet_NaN();
    write_bytes(dir / "nan.cfm", golden_bytes(1, 1, 1, {nan}));
    CHECK_THROWS_AS(load_floatmap((dir / "nan.cfm").string()), std::invalid_argument);

    CHECK_THROWS_AS(load_floatmap((dir / "missing.cfm").string()), std::runtime_error);
}
