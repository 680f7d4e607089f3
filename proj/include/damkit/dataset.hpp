#pragma once

// Captioner-format datasets: JSONL lines {"image": ppm, "mask": rle-json,
// "caption": [words] or "text", ...}. Relative paths resolve against the
// dataset file's directory. Extra fields (prompt, keyword, ...) are ignored.

#include <cctype>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "damkit/captioner.hpp"
#include "damkit/error.hpp"
#include "damkit/image_io.hpp"
#include "damkit/squares.hpp"

namespace damkit {

/// Lowercased whitespace-separated words with surrounding punctuation removed.
inline std::vector<std::string> caption_words(const std::string& caption) {
    std::vector<std::string> out;
    std::string w;
    auto flush = [&] {
        while (!w.empty() && std::ispunct(static_cast<unsigned char>(w.back()))) w.pop_back();
        std::size_t s = 0;
        while (s < w.size() && std::ispunct(static_cast<unsigned char>(w[s]))) ++s;
        if (s < w.size()) out.push_back(w.substr(s));
        w.clear();
    };
    for (unsigned char c : caption) {
        if (std::isspace(c))
            flush();
        else
            w += static_cast<char>(std::tolower(c));
    }
    flush();
    return out;
}

inline std::vector<int> caption_tokens(const std::string& caption, const Vocab& vocab) {
    std::vector<int> t{vocab.bos()};
    for (auto id : vocab.encode(caption_words(caption))) t.push_back(id);
    t.push_back(vocab.eos());
    return t;
}

inline std::vector<int> caption_tokens(const nlohmann::json& caption, const Vocab& vocab) {
    if (caption.is_string()) return caption_tokens(caption.get<std::string>(), vocab);
    std::vector<int> t{vocab.bos()};
    for (auto id : vocab.encode(caption.get<std::vector<std::string>>())) t.push_back(id);
    t.push_back(vocab.eos());
    return t;
}

inline Vocab vocab_from_json(const nlohmann::json& j) {
    try {
        return Vocab(j.get<std::vector<std::string>>());
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("vocabulary must be a JSON list of strings: ") + e.what());
    }
}

inline std::vector<CaptionSample> read_caption_dataset(const std::filesystem::path& path, const Vocab& vocab) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    const auto base = path.parent_path();
    auto resolve = [&](const std::string& p) {
        const std::filesystem::path q(p);
        return q.is_absolute() ? q : base / q;
    };
    std::vector<CaptionSample> out;
    std::string line;
    for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            out.push_back({read_ppm(resolve(j.at("image").get<std::string>())),
                           read_mask(resolve(j.at("mask").get<std::string>())),
                           caption_tokens(j.at("caption"), vocab)});
        } catch (const nlohmann::json::exception& e) {
            throw FormatError(path.string() + " line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

/// Writes `samples` as PPM + mask files plus `dataset.jsonl` under `dir`.
inline std::filesystem::path write_caption_dataset(const std::filesystem::path& dir,
                                                   const std::vector<CaptionSample>& samples, const Vocab& vocab) {
    std::filesystem::create_directories(dir / "images");
    std::filesystem::create_directories(dir / "masks");
    const auto index = dir / "dataset.jsonl";
    std::ofstream out(index, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + index.string());
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto& s = samples[i];
        const auto stem = std::to_string(i);
        write_ppm(dir / "images" / (stem + ".ppm"), s.image);
        write_mask(dir / "masks" / (stem + ".json"), s.mask);
        std::vector<std::string> caption;
        for (auto id : s.target_tokens)
            if (!vocab.is_special(id)) caption.push_back(vocab.token(id));
        out << nlohmann::json{{"image", "images/" + stem + ".ppm"}, {"mask", "masks/" + stem + ".json"}, {"caption", caption}}
                   .dump()
            << '\n';
    }
    if (!out.flush()) throw IoError("write failed: " + index.string());
    return index;
}

}  // namespace damkit
