#include <gtest/gtest.h>

#include <sstream>

#include "damkit/geometry.hpp"
#include "damkit/image_io.hpp"
#include "damkit/rng.hpp"
#include "oracles.hpp"

using namespace damkit;

namespace {

Image random_image(int w, int h, CounterRng& rng) {
    Image img(w, h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) img.at(x, y, c) = rng.uniform();
    return img;
}

RegionMask random_mask(int w, int h, CounterRng& rng, double density = 0.1) {
    RegionMask m(w, h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) m.set(x, y, rng.bernoulli(density));
    if (m.empty()) m.set(static_cast<int>(rng.below(w)), static_cast<int>(rng.below(h)));
    return m;
}

PixelBox random_box(int w, int h, CounterRng& rng) {
    const int x0 = static_cast<int>(rng.below(w));
    const int y0 = static_cast<int>(rng.below(h));
    const int x1 = x0 + 1 + static_cast<int>(rng.below(w - x0));
    const int y1 = y0 + 1 + static_cast<int>(rng.below(h - y0));
    return {x0, y0, x1, y1};
}

}  // namespace

TEST(BboxOfMask, SinglePixel) {
    RegionMask m(8, 8);
    m.set(3, 5);
    EXPECT_EQ(bbox_of_mask(m), (PixelBox{3, 5, 4, 6}));
}

TEST(BboxOfMask, FullMask) { EXPECT_EQ(bbox_of_mask(RegionMask::filled(8, 8)), (PixelBox{0, 0, 8, 8})); }

TEST(BboxOfMask, MatchesScanOracle) {
    CounterRng rng(11);
    for (int t = 0; t < 200; ++t) {
        const auto m = random_mask(24, 24, rng, rng.uniform(0.005, 0.3));
        ASSERT_EQ(bbox_of_mask(m), oracle::bbox_scan(m));
    }
}

TEST(BboxOfMask, EmptyThrows) { EXPECT_THROW(bbox_of_mask(RegionMask(4, 4)), EmptyMask); }

TEST(ExpandBox, GrowsOneSideEachWay) {
    EXPECT_EQ(expand_box({40, 40, 60, 60}, 3, 200, 200, 48), (PixelBox{20, 20, 80, 80}));
}

TEST(ExpandBox, WholeImageUnchanged) {
    EXPECT_EQ(expand_box({0, 0, 200, 200}, 3, 200, 200), (PixelBox{0, 0, 200, 200}));
}

TEST(ExpandBox, CornerBoxHitsFloorAndShiftsInward) {
    EXPECT_EQ(expand_box({0, 0, 10, 10}, 3, 100, 100, 48), (PixelBox{0, 0, 48, 48}));
}

TEST(ExpandBox, FloorCappedAtImageSize) {
    EXPECT_EQ(expand_box({5, 5, 6, 6}, 3, 20, 30, 48), (PixelBox{0, 0, 20, 30}));
}

TEST(ExpandBox, FractionalAlphaRoundsHalfUp) {
    // alpha 2 on a width-5 box: 2.5 per side rounds to 3
    EXPECT_EQ(expand_box({10, 10, 15, 15}, 2, 100, 100, 1), (PixelBox{7, 7, 18, 18}));
}

TEST(ExpandBox, RejectsBadInput) {
    EXPECT_THROW(expand_box({5, 5, 5, 8}, 3, 10, 10), InvalidBox);
    EXPECT_THROW(expand_box({-1, 0, 4, 4}, 3, 10, 10), InvalidBox);
    EXPECT_THROW(expand_box({0, 0, 11, 4}, 3, 10, 10), InvalidBox);
    EXPECT_THROW(expand_box({0, 0, 4, 4}, 0.5, 10, 10), InvalidBox);
    EXPECT_THROW(expand_box({0, 0, 4, 4}, 3, 10, 10, 0), InvalidBox);
}

TEST(ExpandBox, MatchesOracleOnRandomBoxes) {
    CounterRng rng(3);
    for (int t = 0; t < 3000; ++t) {
        const int w = 1 + static_cast<int>(rng.below(120));
        const int h = 1 + static_cast<int>(rng.below(120));
        const auto b = random_box(w, h, rng);
        const int ms = 1 + static_cast<int>(rng.below(64));
        const int num = 2 + static_cast<int>(rng.below(7));  // alpha = num / 2 in [1, 4]
        const auto got = expand_box(b, num / 2.0, w, h, ms);
        ASSERT_EQ(got, oracle::expand_box(b, num, 2, w, h, ms)) << to_string(b) << " in " << w << "x" << h;
    }
}

TEST(ExpandBox, Properties) {
    CounterRng rng(5);
    for (int t = 0; t < 2000; ++t) {
        const int w = 8 + static_cast<int>(rng.below(100));
        const int h = 8 + static_cast<int>(rng.below(100));
        const auto b = random_box(w, h, rng);
        const auto e = expand_box(b, 3, w, h);
        ASSERT_TRUE(e.contains(b));
        ASSERT_TRUE(e.within(w, h));
        ASSERT_GE(e.width(), std::min(48, w));
        ASSERT_GE(e.height(), std::min(48, h));
        // enlarging the input never shrinks the output
        PixelBox bigger = b;
        bigger.x1 = std::min(w, b.x1 + 1);
        bigger.y0 = std::max(0, b.y0 - 1);
        const auto eb = expand_box(bigger, 3, w, h);
        ASSERT_GE(eb.width(), e.width());
        ASSERT_GE(eb.height(), e.height());
    }
}

TEST(ExpandBox, NineTimesAreaAwayFromBorders) {
    for (int s = 16; s <= 40; s += 4) {
        const PixelBox b{200, 200, 200 + s, 200 + s / 2 + 24};
        EXPECT_EQ(expand_box(b, 3, 1000, 1000, 1).area(), 9 * b.area());
    }
}

TEST(Crop, FullBoxIsIdentity) {
    CounterRng rng(1);
    const auto img = random_image(7, 5, rng);
    EXPECT_EQ(crop(img, {0, 0, 7, 5}), img);
}

TEST(Crop, InteriorBlock) {
    Image img(4, 4);
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) img.at(x, y, 0) = 10 * y + x;
    const auto c = crop(img, {1, 1, 3, 3});
    ASSERT_EQ(c.width(), 2);
    ASSERT_EQ(c.height(), 2);
    EXPECT_EQ(c.at(0, 0, 0), 11);
    EXPECT_EQ(c.at(1, 0, 0), 12);
    EXPECT_EQ(c.at(0, 1, 0), 21);
    EXPECT_EQ(c.at(1, 1, 0), 22);
}

TEST(Crop, CompositionMatchesComposedBox) {
    CounterRng rng(8);
    for (int t = 0; t < 100; ++t) {
        const auto img = random_image(20, 16, rng);
        const auto outer = random_box(20, 16, rng);
        const auto inner = random_box(outer.width(), outer.height(), rng);
        const PixelBox composed{outer.x0 + inner.x0, outer.y0 + inner.y0, outer.x0 + inner.x1, outer.y0 + inner.y1};
        ASSERT_EQ(crop(crop(img, outer), inner), crop(img, composed));
    }
}

TEST(Crop, OutOfBoundsThrows) {
    EXPECT_THROW(crop(Image(4, 4), {2, 2, 5, 3}), InvalidBox);
    EXPECT_THROW(crop_mask(RegionMask(4, 4), {0, 0, 0, 1}), InvalidBox);
}

TEST(Resize, SameSizeIsIdentity) {
    CounterRng rng(2);
    const auto img = random_image(9, 6, rng);
    EXPECT_EQ(resize(img, 9, 6), img);
}

TEST(Resize, CheckerboardMaskReplicates) {
    RegionMask m(2, 2);
    m.set(0, 0);
    m.set(1, 1);
    const auto r = resize_mask(m, 4, 4);
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) EXPECT_EQ(r.at(x, y), m.at(x / 2, y / 2)) << x << "," << y;
}

TEST(Resize, ConstantImageStaysConstant) {
    Image img(37, 23, 0.625);
    const auto r = resize(img, 8, 5);
    for (double v : r.data()) EXPECT_EQ(v, 0.625);
}

TEST(Resize, MaskStaysBinary) {
    CounterRng rng(4);
    const auto r = resize_mask(random_mask(13, 11, rng, 0.5), 5, 7);
    for (auto b : r.bits()) EXPECT_TRUE(b == 0 || b == 1);
}

TEST(Resize, RejectsZeroTarget) { EXPECT_THROW(resize(Image(2, 2), 0, 2), ShapeMismatch); }

TEST(FocalPrompt, WholeImageMaskGivesMatchingViews) {
    CounterRng rng(6);
    const auto img = random_image(40, 30, rng);
    const auto p = build_focal_prompt(img, RegionMask::filled(40, 30), 3, 48, 16);
    EXPECT_EQ(p.crop_box, (PixelBox{0, 0, 40, 30}));
    EXPECT_EQ(p.focal_image, p.full_image);
    EXPECT_EQ(p.focal_mask.bits(), p.full_mask.bits());
}

TEST(FocalPrompt, TinyCentralMaskGetsCentredFloor) {
    RegionMask m(64, 64);
    m.fill({31, 31, 33, 33});
    const auto p = build_focal_prompt(Image(64, 64), m, 3, 48, 32);
    // 2x2 box grows to 6x6 (29..35), then to 48 about its centre
    EXPECT_EQ(p.crop_box, (PixelBox{8, 8, 56, 56}));
}

TEST(FocalPrompt, CropContainsMaskBoxAndKeepsBits) {
    CounterRng rng(9);
    for (int t = 0; t < 100; ++t) {
        const int w = 16 + static_cast<int>(rng.below(80));
        const int h = 16 + static_cast<int>(rng.below(80));
        RegionMask m(w, h);
        m.fill(random_box(w, h, rng));
        const auto p = build_focal_prompt(random_image(w, h, rng), m, 3, 48, 16);
        ASSERT_TRUE(p.crop_box.contains(bbox_of_mask(m)));
        ASSERT_EQ(crop_mask(m, p.crop_box).count(), m.count());
        ASSERT_EQ(p.focal_image.width(), 16);
        ASSERT_EQ(p.full_mask.height(), 16);
    }
}

TEST(FocalPrompt, Errors) {
    EXPECT_THROW(build_focal_prompt(Image(8, 8), RegionMask(8, 8)), EmptyMask);
    EXPECT_THROW(build_focal_prompt(Image(8, 8), RegionMask::filled(8, 9)), ShapeMismatch);
}

TEST(Rle, KnownColumnMajorCounts) {
    // 3x2 mask, set pixels (1,0) and (1,1) and (2,1); column-major order
    // visits (0,0) (0,1) (1,0) (1,1) (2,0) (2,1) -> 0 0 1 1 0 1
    RegionMask m(3, 2);
    m.set(1, 0);
    m.set(1, 1);
    m.set(2, 1);
    EXPECT_EQ(encode_rle(m), (std::vector<std::uint32_t>{2, 2, 1, 1}));
    EXPECT_EQ(encode_rle(RegionMask::filled(2, 2)), (std::vector<std::uint32_t>{0, 4}));
}

TEST(Rle, RoundTrip) {
    CounterRng rng(10);
    for (int t = 0; t < 50; ++t) {
        const auto m = random_mask(1 + static_cast<int>(rng.below(30)), 1 + static_cast<int>(rng.below(30)), rng, 0.4);
        const auto back = mask_from_json(mask_to_json(m));
        ASSERT_EQ(back.bits(), m.bits());
    }
}

TEST(Rle, RejectsBadCounts) {
    EXPECT_THROW(decode_rle(2, 2, {1, 1}), FormatError);
    EXPECT_THROW(decode_rle(2, 2, {3, 3}), FormatError);
    EXPECT_THROW(mask_from_json(nlohmann::json{{"width", 2}}), FormatError);
}

TEST(Ppm, RoundTripAt8Bits) {
    Image img(3, 2);
    for (int y = 0; y < 2; ++y)
        for (int x = 0; x < 3; ++x)
            for (int c = 0; c < 3; ++c) img.at(x, y, c) = (x + 3 * y + c) * 17 / 255.0;
    std::stringstream ss;
    write_ppm(ss, img);
    const auto back = read_ppm(ss);
    for (std::size_t i = 0; i < img.data().size(); ++i) EXPECT_NEAR(back.data()[i], img.data()[i], 1e-12);
}

TEST(Ppm, RejectsOtherFormats) {
    std::stringstream ss("P3\n1 1\n255\n0 0 0\n");
    EXPECT_THROW(read_ppm(ss), FormatError);
}
