#include <catch2/catch_amalgamated.hpp>

#include <bit>
#include <cstring>
#include <limits>

#include "convmcd/config.hpp"
#include "convmcd/fmap.hpp"
#include "convmcd/model.hpp"
#include "convmcd/png_io.hpp"
#include "temp_dir.hpp"

using namespace convmcd;

namespace {

bool same_bits(const FloatMap& a, const FloatMap& b) {
  return a.channels == b.channels && a.width == b.width && a.height == b.height && a.data.size() == b.data.size() &&
         std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(float)) == 0;
}

}  // namespace

TEST_CASE("fmap encoding", "[io][fmap]") {
  SECTION("header layout") {
    FloatMap m;
    m.channels = 2;
    m.width = 3;
    m.height = 1;
    m.data = {1.0f, 0.0f, -2.5f, 0.5f, 0.25f, 8.0f};
    const auto bytes = encode_fmap(m);
    REQUIRE(bytes.size() == 14 + 4 * 6);
    CHECK(bytes.substr(0, 4) == "FMAP");
    CHECK(bytes[4] == 1);
    CHECK(bytes[5] == 2);
    CHECK(std::string(bytes.data() + 6, 4) == std::string("\x03\x00\x00\x00", 4));
    CHECK(std::string(bytes.data() + 10, 4) == std::string("\x01\x00\x00\x00", 4));
    CHECK(std::string(bytes.data() + 14, 4) == std::string("\x00\x00\x80\x3f", 4));  // 1.0f little-endian
  }
  SECTION("bit-exact round trip including special values") {
    Rng rng(1);
    for (int trial = 0; trial < 20; ++trial) {
      FloatMap m;
      m.channels = static_cast<std::uint8_t>(rng.uniform_int(1, 3));
      m.width = static_cast<std::uint32_t>(rng.uniform_int(1, 17));
      m.height = static_cast<std::uint32_t>(rng.uniform_int(1, 9));
      m.data.resize(m.channels * m.plane_size());
      for (auto& v : m.data) v = std::bit_cast<float>(static_cast<std::uint32_t>(rng.uniform() * 4294967296.0));
      m.data[0] = -0.0f;
      if (m.data.size() > 2) {
        m.data[1] = std::numeric_limits<float>::infinity();
        m.data[2] = std::numeric_limits<float>::denorm_min();
      }
      REQUIRE(same_bits(decode_fmap(encode_fmap(m)), m));
    }
  }
  SECTION("file round trip") {
    TempDir dir("fmap");
    ImageGrid<double> g(5, 4);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = static_cast<double>(i) / 7.0;
    const auto m = FloatMap::from_grid(g);
    write_fmap(dir / "a.fmap", m);
    const auto back = read_fmap(dir / "a.fmap");
    CHECK(same_bits(back, m));
    CHECK(back.channel(0)(3, 4) == static_cast<double>(static_cast<float>(19.0 / 7.0)));
    CHECK_THROWS_AS(back.channel(1), InvalidArgument);
  }
  SECTION("malformed input") {
    FloatMap m;
    m.width = 2;
    m.height = 2;
    m.data = {1, 2, 3, 4};
    const auto good = encode_fmap(m);
    auto bad_magic = good;
    bad_magic[0] = 'G';
    auto bad_version = good;
    bad_version[4] = 2;
    CHECK_THROWS_AS(decode_fmap(bad_magic), FormatError);
    CHECK_THROWS_AS(decode_fmap(bad_version), FormatError);
    CHECK_THROWS_AS(decode_fmap(good.substr(0, good.size() - 1)), FormatError);
    CHECK_THROWS_AS(decode_fmap(good + "x"), FormatError);
    CHECK_THROWS_AS(decode_fmap(good.substr(0, 10)), FormatError);
  }
}

TEST_CASE("png masks", "[io][png]") {
  TempDir dir("png");
  SECTION("mask round trip") {
    Rng rng(2);
    const auto m = BinaryMask::from_predicate(13, 7, [&](int, int) { return rng.uniform() < 0.4; });
    write_mask_png(dir / "m.png", m);
    CHECK(read_mask_png(dir / "m.png") == m);
    const auto gray = read_png_gray(dir / "m.png");
    for (std::size_t i = 0; i < m.size(); ++i) CHECK(gray[i] == (m[i] ? 255 : 0));
  }
  SECTION("foreground is strictly above 127") {
    ImageGrid<std::uint8_t> g(4, 1, std::vector<std::uint8_t>{0, 127, 128, 255});
    write_png_gray(dir / "g.png", g);
    const auto m = read_mask_png(dir / "g.png");
    CHECK_FALSE(m[0]);
    CHECK_FALSE(m[1]);
    CHECK(m[2]);
    CHECK(m[3]);
  }
  SECTION("garbage and truncated files are rejected") {
    spit(dir.path() / "junk.png", "definitely not a png");
    CHECK_THROWS_AS(read_png_gray(dir / "junk.png"), FormatError);
    write_mask_png(dir / "ok.png", BinaryMask(8, 8));
    const auto bytes = slurp(dir.path() / "ok.png");
    spit(dir.path() / "cut.png", bytes.substr(0, bytes.size() / 2));
    CHECK_THROWS_AS(read_png_gray(dir / "cut.png"), FormatError);
    CHECK_THROWS_AS(read_png_gray(dir / "missing.png"), FormatError);
  }
}

TEST_CASE("run config", "[io][config]") {
  using nlohmann::json;
  SECTION("defaults") {
    const auto c = run_config_from_json(json::object());
    CHECK(c.distance == DistanceMapKind::d2);
    CHECK(c.radius.is_auto());
    CHECK(c.variant == HeadVariant::mcd);
    CHECK(c.weights.mask == 1.0);
    CHECK(c.protocol.mf_tolerance == 2.0);
    CHECK(c.protocol.trimap_widths.size() == 20);
    CHECK(c.protocol.mf_thresholds.size() == 19);
  }
  SECTION("all fields") {
    const auto c = run_config_from_json(json::parse(R"({
      "distance": "d3", "radius": 4, "d1_direction": "to_background",
      "weights": {"mask": 1, "contour": 0.5, "distance": 2},
      "variant": "md", "trimap_widths": [2, 4], "mf_tolerance": 1.5,
      "mf_thresholds": [0.5], "seed": 9})"));
    CHECK(c.distance == DistanceMapKind::d3);
    CHECK(c.radius.resolve(1000, 1000) == 4);
    CHECK(c.d1_direction == D1Direction::to_background);
    CHECK(c.weights.contour == 0.5);
    CHECK(c.variant == HeadVariant::md);
    CHECK(c.protocol.trimap_widths == std::vector<int>{2, 4});
    CHECK(c.seed == 9);
    CHECK(run_config_from_json(json::parse(R"({"radius": "AUTO"})")).radius.is_auto());
  }
  SECTION("rejections") {
    for (const char* text : {R"({"distnace": "d2"})", R"({"weights": {"mask": 1, "edge": 1}})",
                             R"({"weights": {"mask": -1}})", R"({"distance": "d4"})", R"({"radius": 0})",
                             R"({"trimap_widths": [3, 2]})", R"({"mf_thresholds": [1.0]})", R"({"variant": 3})",
                             R"([1, 2])"}) {
      INFO(text);
      CHECK_THROWS_AS(run_config_from_json(json::parse(text)), InvalidArgument);
    }
  }
  SECTION("files") {
    TempDir dir("cfg");
    spit(dir.path() / "c.json", R"({"variant": "mc"})");
    CHECK(load_run_config(dir / "c.json").variant == HeadVariant::mc);
    spit(dir.path() / "bad.json", "{");
    CHECK_THROWS_AS(load_run_config(dir / "bad.json"), InvalidArgument);
    CHECK_THROWS_AS(load_run_config(dir / "none.json"), InvalidArgument);
  }
}
