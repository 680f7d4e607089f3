#pragma once

// Synthetic "coloured squares" captioning task: a 32x32 image holds four 8x8
// squares of distinct colours, the mask selects one, and the caption names its
// colour. Without the mask the answer is a 1-in-4 guess.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "damkit/captioner.hpp"
#include "damkit/geometry.hpp"
#include "damkit/rng.hpp"

namespace damkit::squares {

inline constexpr int kImageSize = 32;
inline constexpr int kSquareSize = 8;
inline constexpr int kCellSize = 16;

struct Colour {
    const char* word;
    double r, g, b;
};

inline constexpr std::array<Colour, 4> kColours{{
    {"red", 0.9, 0.1, 0.1},
    {"green", 0.1, 0.8, 0.2},
    {"blue", 0.15, 0.2, 0.9},
    {"yellow", 0.9, 0.85, 0.1},
}};

struct Scene {
    Image image;
    std::array<PixelBox, 4> squares;  // one per quadrant
    std::array<int, 4> colour_of;     // index into kColours per quadrant
};

/// One scene: squares jittered inside their quadrant, colours permuted.
inline Scene make_scene(CounterRng& rng) {
    Scene s;
    s.image = Image(kImageSize, kImageSize);
    for (int y = 0; y < kImageSize; ++y)
        for (int x = 0; x < kImageSize; ++x)
            for (int c = 0; c < Image::kChannels; ++c) s.image.at(x, y, c) = 0.35 + 0.1 * rng.uniform();
    std::array<int, 4> perm{0, 1, 2, 3};
    damkit::shuffle(perm, rng);
    for (int q = 0; q < 4; ++q) {
        const int ox = (q % 2) * kCellSize + static_cast<int>(rng.below(kCellSize - kSquareSize + 1));
        const int oy = (q / 2) * kCellSize + static_cast<int>(rng.below(kCellSize - kSquareSize + 1));
        s.squares[q] = {ox, oy, ox + kSquareSize, oy + kSquareSize};
        s.colour_of[q] = perm[q];
        const auto& col = kColours[perm[q]];
        s.image.fill(s.squares[q], col.r, col.g, col.b);
    }
    return s;
}

/// `count` samples; with `ablate_masks` every mask covers the whole image so
/// the target square cannot be identified.
inline std::vector<CaptionSample> make_dataset(std::size_t count, std::uint64_t seed, const Vocab& vocab,
                                               bool ablate_masks = false) {
    CounterRng rng(seed);
    std::vector<CaptionSample> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        auto scene = make_scene(rng);
        const int target = static_cast<int>(rng.below(4));
        RegionMask mask(kImageSize, kImageSize);
        if (ablate_masks)
            mask = RegionMask::filled(kImageSize, kImageSize);
        else
            mask.fill(scene.squares[target]);
        out.push_back({std::move(scene.image), std::move(mask),
                       {vocab.bos(), vocab.id(kColours[scene.colour_of[target]].word), vocab.eos()}});
    }
    return out;
}

}  // namespace damkit::squares
