#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "edgeseg/error.hpp"
#include "edgeseg/imgrid.hpp"
#include "edgeseg/pnm.hpp"

using namespace edgeseg;
namespace fs = std::filesystem;

namespace {

Image2D grey(int h, int w, std::vector<int> raw) {
  std::vector<float> v;
  for (int x : raw) v.push_back(static_cast<float>(x) / 255.0f);
  return Image2D(h, w, 1, v);
}

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / "edgeseg_test_imgrid";
  fs::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST_CASE("image and mask invariants") {
  CHECK_THROWS_AS(Image2D(2, 2, 1, {0.f, 0.f, 0.f}), Error);
  CHECK_THROWS_AS(Image2D(1, 1, 1, {1.5f}), Error);
  CHECK_THROWS_AS(Image2D(1, 1, 2, {0.f, 0.f}), Error);
  CHECK_THROWS_AS(LabelMask(1, 2, {0, 3}), Error);
  const auto m = LabelMask(2, 2, {0, 1, 2, 2});
  CHECK(m.count(Label::Cup) == 2);
  CHECK(m.at(0, 1) == Label::Disc);
}

TEST_CASE("channel stack roles and one-hot check") {
  CHECK_THROWS_AS(ChannelStack(1, 1, {ChannelRole::Background, ChannelRole::Background}, {1.f, 0.f}), Error);
  const ChannelStack s(1, 2, region_roles(), {1.f, 0.f, 0.f, 0.f, 0.f, 1.f});
  CHECK(s.is_one_hot());
  CHECK(s.channel_of(ChannelRole::CupRegion) == 2);
  CHECK(s.channel_of(ChannelRole::CupEdge) == -1);
  CHECK(s.plane(2).data == std::vector<std::uint8_t>{0, 1});
  const ChannelStack soft(1, 1, region_roles(), {0.5f, 0.5f, 0.f});
  CHECK_FALSE(soft.is_one_hot());
  for (auto r : edge_roles()) CHECK(role_from_name(role_name(r)) == r);
}

TEST_CASE("label mapping") {
  const auto def = LabelMapping::default_mapping();
  CHECK(def.to_string() == "0:0,128:1,255:2");
  CHECK(LabelMapping::parse(def.to_string()).entries() == def.entries());
  CHECK_THROWS_AS(LabelMapping({{0, Label::Background}, {0, Label::Disc}, {255, Label::Cup}}), Error);
  CHECK_THROWS_AS(LabelMapping({{0, Label::Background}, {255, Label::Cup}}), Error);
  CHECK_THROWS_AS(LabelMapping::parse("0:0,128:1,255:3"), Error);
  // several raw values may share a class
  const LabelMapping multi({{0, Label::Background}, {10, Label::Background}, {1, Label::Disc}, {2, Label::Cup}});
  CHECK(multi.raw_for(Label::Background) == 0);
}

TEST_CASE("remap_labels") {
  const auto map = LabelMapping::default_mapping();
  SUBCASE("all zero") {
    const auto m = remap_labels(grey(2, 3, {0, 0, 0, 0, 0, 0}), map);
    CHECK(m.count(Label::Background) == 6);
  }
  SUBCASE("one disc pixel") {
    const auto m = remap_labels(grey(2, 2, {0, 128, 0, 0}), map);
    CHECK(m.count(Label::Disc) == 1);
    CHECK(m.at(0, 1) == Label::Disc);
  }
  SUBCASE("unmapped value") {
    try {
      remap_labels(grey(1, 3, {0, 17, 255}), map);
      FAIL("expected UnmappedValue");
    } catch (const UnmappedValueError& e) {
      CHECK(e.value() == 17);
      CHECK(e.kind() == ErrorKind::UnmappedValue);
    }
  }
  SUBCASE("render is the inverse") {
    std::mt19937_64 rng(5);
    std::vector<std::uint8_t> labels(7 * 9);
    for (auto& l : labels) l = static_cast<std::uint8_t>(rng() % 3);
    const LabelMask m(7, 9, labels);
    CHECK(remap_labels(render_labels(m, map), map) == m);
    const auto custom = LabelMapping::parse("0:0,1:1,2:2");
    CHECK(remap_labels(render_labels(m, custom), custom) == m);
  }
  SUBCASE("multi-channel input is rejected") {
    CHECK_THROWS_AS(remap_labels(Image2D::filled(2, 2, 3, 0.f), map), Error);
  }
}

TEST_CASE("resize_mask_nearest") {
  CHECK(resize_mask_nearest(LabelMask::filled(4, 4, Label::Disc), 2, 2) == LabelMask::filled(2, 2, Label::Disc));
  const LabelMask small(2, 2, {0, 1, 1, 2});
  CHECK(resize_mask_nearest(small, 2, 2) == small);
  const LabelMask big = resize_mask_nearest(small, 4, 4);
  const LabelMask expected(4, 4, {0, 0, 1, 1,  //
                                  0, 0, 1, 1,  //
                                  1, 1, 2, 2,  //
                                  1, 1, 2, 2});
  CHECK(big == expected);
  CHECK_THROWS_AS(resize_mask_nearest(small, 0, 3), Error);

  std::mt19937_64 rng(9);
  std::vector<std::uint8_t> labels(13 * 11);
  for (auto& l : labels) l = static_cast<std::uint8_t>(rng() % 2);  // no cup
  const LabelMask two(13, 11, labels);
  for (auto [h, w] : {std::pair{5, 7}, {26, 3}, {40, 40}}) CHECK(resize_mask_nearest(two, h, w).count(Label::Cup) == 0);
}

TEST_CASE("resize_image_bilinear") {
  const auto c = resize_image_bilinear(Image2D::filled(5, 4, 3, 0.25f), 9, 2);
  CHECK(c.height() == 9);
  CHECK(c.width() == 2);
  for (float v : c.data()) CHECK(v == doctest::Approx(0.25f));

  std::mt19937_64 rng(2);
  std::uniform_real_distribution<float> u(0.f, 1.f);
  std::vector<float> px(6 * 5 * 3);
  for (auto& v : px) v = u(rng);
  const Image2D img(6, 5, 3, px);
  CHECK(resize_image_bilinear(img, 6, 5) == img);

  const auto col = resize_image_bilinear(Image2D(2, 1, 1, {0.f, 1.f}), 3, 1);
  CHECK(col.at(0, 0) == doctest::Approx(0.0));
  CHECK(col.at(1, 0) == doctest::Approx(0.5));
  CHECK(col.at(2, 0) == doctest::Approx(1.0));

  const auto down = resize_image_bilinear(img, 3, 2);
  for (float v : down.data()) {
    CHECK(v >= 0.f);
    CHECK(v <= 1.f);
  }
}

TEST_CASE("pnm round trip") {
  std::vector<float> px;
  for (int i = 0; i < 4 * 3 * 3; ++i) px.push_back(static_cast<float>(i * 7 % 256) / 255.0f);
  const Image2D rgb(4, 3, 3, px);
  write_pnm(scratch("rgb.ppm"), rgb);
  CHECK(read_pnm(scratch("rgb.ppm")) == rgb);

  const auto g = grey(2, 2, {0, 128, 255, 3});
  write_pnm(scratch("g.pgm"), g);
  CHECK(read_pnm(scratch("g.pgm")) == g);

  write_pgm_bytes(scratch("b.pgm"), 1, 3, {0, 255, 9});
  const auto b = read_pnm(scratch("b.pgm"));
  CHECK(quantize(b.at(0, 1)) == 255);
  CHECK(quantize(b.at(0, 2)) == 9);

  {
    std::ofstream f(scratch("c.pgm"), std::ios::binary);
    f << "P5\n# comment\n2 1\n255\n";
    f.put(static_cast<char>(10));
    f.put(static_cast<char>(20));
  }
  CHECK(quantize(read_pnm(scratch("c.pgm")).at(0, 1)) == 20);
  {
    std::ofstream f(scratch("bad.pgm"), std::ios::binary);
    f << "P5\n2 1\n65535\n";
  }
  CHECK_THROWS_AS(read_pnm(scratch("bad.pgm")), Error);
  CHECK_THROWS_AS(read_pnm(scratch("missing.pgm")), Error);
}
