#pragma once

// PPM (P6) images and run-length-encoded mask files.
//
// Mask files are JSON {"width":W,"height":H,"counts":[...]} holding
// uncompressed COCO-style RLE: pixels are visited column by column
// (column-major, like pycocotools) and counts alternate zero-runs and
// one-runs, starting with a (possibly empty) run of zeros.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "damkit/error.hpp"
#include "damkit/geometry.hpp"

namespace damkit {

inline std::vector<std::uint32_t> encode_rle(const RegionMask& mask) {
    std::vector<std::uint32_t> counts;
    std::uint8_t current = 0;
    std::uint32_t run = 0;
    for (int x = 0; x < mask.width(); ++x) {
        for (int y = 0; y < mask.height(); ++y) {
            const std::uint8_t bit = mask.at(x, y) ? 1 : 0;
            if (bit != current) {
                counts.push_back(run);
                run = 0;
                current = bit;
            }
            ++run;
        }
    }
    counts.push_back(run);
    return counts;
}

inline RegionMask decode_rle(int width, int height, const std::vector<std::uint32_t>& counts) {
    if (width < 1 || height < 1) throw FormatError("RLE mask dimensions must be positive");
    RegionMask mask(width, height);
    const std::uint64_t total = static_cast<std::uint64_t>(width) * height;
    std::uint64_t pos = 0;
    bool bit = false;
    for (const auto run : counts) {
        if (pos + run > total) throw FormatError("RLE counts exceed " + std::to_string(total) + " pixels");
        if (bit)
            for (std::uint64_t i = pos; i < pos + run; ++i)
                mask.set(static_cast<int>(i / height), static_cast<int>(i % height));
        pos += run;
        bit = !bit;
    }
    if (pos != total)
        throw FormatError("RLE counts cover " + std::to_string(pos) + " of " + std::to_string(total) + " pixels");
    return mask;
}

inline nlohmann::json mask_to_json(const RegionMask& mask) {
    return {{"width", mask.width()}, {"height", mask.height()}, {"counts", encode_rle(mask)}};
}

inline RegionMask mask_from_json(const nlohmann::json& j) {
    try {
        return decode_rle(j.at("width").get<int>(), j.at("height").get<int>(),
                          j.at("counts").get<std::vector<std::uint32_t>>());
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("malformed mask JSON: ") + e.what());
    }
}

inline std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline nlohmann::json read_json_file(const std::filesystem::path& path) {
    try {
        return nlohmann::json::parse(read_text_file(path));
    } catch (const nlohmann::json::parse_error& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

inline RegionMask read_mask(const std::filesystem::path& path) { return mask_from_json(read_json_file(path)); }

inline void write_mask(const std::filesystem::path& path, const RegionMask& mask) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << mask_to_json(mask).dump() << '\n';
    if (!out) throw IoError("write failed: " + path.string());
}

namespace detail {

inline int next_ppm_int(std::istream& in) {
    int c = in.peek();
    while (in && (std::isspace(c) || c == '#')) {
        if (c == '#') {
            std::string line;
            std::getline(in, line);
        } else {
            in.get();
        }
        c = in.peek();
    }
    int value = -1;
    if (!(in >> value)) throw FormatError("truncated PPM header");
    return value;
}

}  // namespace detail

inline Image read_ppm(std::istream& in) {
    std::string magic(2, '\0');
    in.read(magic.data(), 2);
    if (magic != "P6") throw FormatError("not a binary PPM (P6) stream");
    const int w = detail::next_ppm_int(in);
    const int h = detail::next_ppm_int(in);
    const int maxval = detail::next_ppm_int(in);
    if (w < 1 || h < 1) throw FormatError("PPM dimensions must be positive");
    if (maxval < 1 || maxval > 255) throw FormatError("only 8-bit PPM is supported");
    in.get();  // single whitespace before the raster
    std::vector<unsigned char> raw(static_cast<std::size_t>(w) * h * 3);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (in.gcount() != static_cast<std::streamsize>(raw.size())) throw FormatError("truncated PPM raster");
    std::vector<double> data(raw.size());
    for (std::size_t i = 0; i < raw.size(); ++i) data[i] = raw[i] / static_cast<double>(maxval);
    return Image(w, h, std::move(data));
}

inline Image read_ppm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    return read_ppm(in);
}

inline void write_ppm(std::ostream& out, const Image& image) {
    out << "P6\n" << image.width() << ' ' << image.height() << "\n255\n";
    std::vector<unsigned char> raw(image.data().size());
    for (std::size_t i = 0; i < raw.size(); ++i) {
        const double v = std::clamp(image.data()[i], 0.0, 1.0);
        raw[i] = static_cast<unsigned char>(std::lround(v * 255.0));
    }
    out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
}

inline void write_ppm(const std::filesystem::path& path, const Image& image) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    write_ppm(out, image);
    if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace damkit
