#pragma once

// Two-stage data pipeline simulator.
//   stage 1: keyword -> detailed caption expansion by an annotator
//   stage 2: self-labeling of unlabeled images with confidence filtering and
//            per-image instance rules
// Detectors, segmenters and similarity models are interfaces; the synthetic
// implementations below make the selection logic testable.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "damkit/error.hpp"
#include "damkit/parallel.hpp"
#include "damkit/rng.hpp"

namespace damkit::pipeline {

enum class Source { Supervised, SelfLabeled };

inline std::string to_string(Source s) { return s == Source::Supervised ? "supervised" : "self_labeled"; }

struct LabeledRegion {
    std::string image;
    std::string mask;
    std::string keyword;
    std::optional<std::string> caption;
    Source source = Source::Supervised;
    double confidence = 1.0;
    std::size_t region_index = 0;  // position within its image's candidate list
};

enum class Granularity { Keyword, Phrase, Detailed };

inline std::string to_string(Granularity g) {
    switch (g) {
        case Granularity::Keyword: return "keyword";
        case Granularity::Phrase: return "phrase";
        case Granularity::Detailed: return "detailed";
    }
    return "?";
}

/// Word limit per granularity; 0 means unlimited.
inline std::size_t word_limit(Granularity g) {
    switch (g) {
        case Granularity::Keyword: return 4;
        case Granularity::Phrase: return 12;
        case Granularity::Detailed: return 0;
    }
    return 0;
}

struct PipelineConfig {
    double conf_threshold = 0.5;
    std::size_t max_instances_per_image = 2;
    double class_name_prob = 0.5;
    std::vector<Granularity> granularities{Granularity::Keyword, Granularity::Phrase, Granularity::Detailed};

    void validate() const {
        if (!(conf_threshold >= 0.0 && conf_threshold <= 1.0))
            throw Error("conf_threshold must lie in [0, 1], got " + std::to_string(conf_threshold));
        if (max_instances_per_image < 1) throw Error("max_instances_per_image must be at least 1");
        if (!(class_name_prob >= 0.0 && class_name_prob <= 1.0))
            throw Error("class_name_prob must lie in [0, 1], got " + std::to_string(class_name_prob));
    }
};

// --- stage 1 -------------------------------------------------------------------

class Annotator {
public:
    virtual ~Annotator() = default;
    /// Detailed caption for the region; throws AnnotatorFailure on failure.
    virtual std::string annotate(const std::string& image, const std::string& mask, const std::string& keyword) const = 0;
};

struct Stage1Result {
    std::vector<LabeledRegion> regions;
    std::vector<std::string> log;
};

inline Stage1Result stage1_expand(const std::vector<LabeledRegion>& regions, const Annotator& annotator) {
    for (std::size_t i = 0; i < regions.size(); ++i)
        if (regions[i].source != Source::Supervised || regions[i].keyword.empty())
            throw Error("stage 1 input " + std::to_string(i) + " must be supervised with a keyword");
    Stage1Result out;
    for (std::size_t i = 0; i < regions.size(); ++i) {
        const auto& r = regions[i];
        std::string caption;
        try {
            caption = annotator.annotate(r.image, r.mask, r.keyword);
        } catch (const AnnotatorFailure& e) {
            out.log.push_back("region " + std::to_string(i) + " (" + r.keyword + "): annotator failed: " + e.what());
            continue;
        }
        if (caption.empty()) {
            out.log.push_back("region " + std::to_string(i) + " (" + r.keyword + "): empty caption, dropped");
            continue;
        }
        auto labeled = r;
        labeled.caption = std::move(caption);
        out.regions.push_back(std::move(labeled));
    }
    return out;
}

// --- stage 2 -------------------------------------------------------------------

struct Candidate {
    std::string mask;
    std::string class_name;
    double proposal_score = 0.0;
};

struct UnlabeledImage {
    std::string image;
    std::vector<Candidate> candidates;
};

class Describer {
public:
    virtual ~Describer() = default;
    virtual std::string describe(const UnlabeledImage& image, std::size_t index) const = 0;
};

class SimilarityScorer {
public:
    virtual ~SimilarityScorer() = default;
    /// Confidence in [0, 1] that `caption` matches the candidate region.
    virtual double score(const std::string& caption, const UnlabeledImage& image, std::size_t index) const = 0;
};

enum class RejectReason { LowConfidence, TooManyInstances, DuplicateClass };

inline std::string to_string(RejectReason r) {
    switch (r) {
        case RejectReason::LowConfidence: return "LowConfidence";
        case RejectReason::TooManyInstances: return "TooManyInstances";
        case RejectReason::DuplicateClass: return "DuplicateClass";
    }
    return "?";
}

struct Rejection {
    std::string image;
    std::size_t region_index = 0;
    std::string class_name;
    double confidence = 0.0;
    RejectReason reason = RejectReason::LowConfidence;
};

struct Stage2Result {
    std::vector<LabeledRegion> accepted;  // input order
    std::vector<Rejection> rejected;      // input order
};

/// Selection on one image given per-candidate confidences. Returns, per
/// candidate, either nullopt (kept) or the rejection reason.
inline std::vector<std::optional<RejectReason>> select_instances(const std::vector<std::string>& classes,
                                                                 const std::vector<double>& confidences,
                                                                 const PipelineConfig& cfg) {
    const std::size_t n = classes.size();
    std::vector<std::optional<RejectReason>> verdict(n);
    std::vector<std::size_t> order;
    for (std::size_t i = 0; i < n; ++i) {
        if (confidences[i] >= cfg.conf_threshold)
            order.push_back(i);
        else
            verdict[i] = RejectReason::LowConfidence;
    }
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (confidences[a] != confidences[b]) return confidences[a] > confidences[b];
        return a < b;
    });
    std::set<std::string> kept_classes;
    for (auto i : order) {
        if (kept_classes.count(classes[i]))
            verdict[i] = RejectReason::DuplicateClass;
        else if (kept_classes.size() >= cfg.max_instances_per_image)
            verdict[i] = RejectReason::TooManyInstances;
        else
            kept_classes.insert(classes[i]);
    }
    return verdict;
}

/// Describes and scores every candidate, filters by confidence, then keeps at
/// most `max_instances_per_image` regions of distinct classes per image,
/// preferring higher confidence, then lower index. Images are processed on
/// `workers` threads; output order follows input order.
inline Stage2Result stage2_selftrain(const std::vector<UnlabeledImage>& images, const Describer& describer,
                                     const SimilarityScorer& scorer, const PipelineConfig& cfg, std::size_t workers = 1) {
    cfg.validate();
    struct PerImage {
        std::vector<LabeledRegion> accepted;
        std::vector<Rejection> rejected;
    };
    std::vector<PerImage> results(images.size());
    parallel_for(images.size(), workers, [&](std::size_t k) {
        const auto& img = images[k];
        const std::size_t n = img.candidates.size();
        std::vector<std::string> captions(n), classes(n);
        std::vector<double> conf(n);
        for (std::size_t i = 0; i < n; ++i) {
            captions[i] = describer.describe(img, i);
            conf[i] = scorer.score(captions[i], img, i);
            if (!(conf[i] >= 0.0 && conf[i] <= 1.0))
                throw Error("scorer returned confidence " + std::to_string(conf[i]) + " outside [0, 1] for " + img.image);
            classes[i] = img.candidates[i].class_name;
        }
        const auto verdict = select_instances(classes, conf, cfg);
        auto& out = results[k];
        for (std::size_t i = 0; i < n; ++i) {
            if (verdict[i]) {
                out.rejected.push_back({img.image, i, classes[i], conf[i], *verdict[i]});
            } else {
                out.accepted.push_back(
                    {img.image, img.candidates[i].mask, classes[i], captions[i], Source::SelfLabeled, conf[i], i});
            }
        }
    });
    Stage2Result out;
    for (auto& r : results) {
        std::move(r.accepted.begin(), r.accepted.end(), std::back_inserter(out.accepted));
        std::move(r.rejected.begin(), r.rejected.end(), std::back_inserter(out.rejected));
    }
    return out;
}

// --- granularities -----------------------------------------------------------------

class Summarizer {
public:
    virtual ~Summarizer() = default;
    /// Shorter form of `caption`; throws SummarizerFailure on failure.
    virtual std::string summarize(const std::string& caption, Granularity g) const = 0;
};

inline std::vector<std::string> split_words(const std::string& s) {
    std::istringstream in(s);
    std::vector<std::string> words;
    for (std::string w; in >> w;) words.push_back(std::move(w));
    return words;
}

/// First `limit` words joined by single spaces, or `s` unchanged when it is
/// already within the limit.
inline std::string truncate_words(const std::string& s, std::size_t limit, bool* truncated = nullptr) {
    const auto words = split_words(s);
    if (truncated) *truncated = false;
    if (limit == 0 || words.size() <= limit) return s;
    if (truncated) *truncated = true;
    std::string out;
    for (std::size_t i = 0; i < limit; ++i) out += (i ? " " : "") + words[i];
    return out;
}

struct GranularityResult {
    std::map<std::string, std::string> outputs;
    std::vector<std::string> log;
};

inline GranularityResult summarize_granularities(const std::string& caption, const Summarizer& summarizer,
                                                 const PipelineConfig& cfg) {
    if (caption.empty()) throw EmptyInput("summarize_granularities needs a nonempty caption");
    GranularityResult out;
    for (auto g : cfg.granularities) {
        const auto key = to_string(g);
        if (g == Granularity::Detailed) {
            out.outputs[key] = caption;
            continue;
        }
        std::string s;
        try {
            s = summarizer.summarize(caption, g);
        } catch (const SummarizerFailure& e) {
            out.log.push_back(key + ": summarizer failed: " + e.what());
            continue;
        }
        bool truncated = false;
        s = truncate_words(s, word_limit(g), &truncated);
        if (truncated) out.log.push_back(key + ": truncated to " + std::to_string(word_limit(g)) + " words");
        out.outputs[key] = std::move(s);
    }
    return out;
}

// --- training-set emission ---------------------------------------------------------

inline constexpr const char* kDefaultPrompt = "Describe the masked region in detail.";

inline std::string prompt_with_class(const std::string& keyword) {
    return "Describe the masked region in detail. The region shows a " + keyword + ".";
}

/// One JSON object per line. Whether a sample's prompt names its class is a
/// Bernoulli(class_name_prob) draw seeded by (seed, sample index).
inline std::string training_set_jsonl(const std::vector<LabeledRegion>& regions, double class_name_prob,
                                      std::uint64_t seed) {
    if (!(class_name_prob >= 0.0 && class_name_prob <= 1.0))
        throw Error("class_name_prob must lie in [0, 1], got " + std::to_string(class_name_prob));
    std::string out;
    for (std::size_t i = 0; i < regions.size(); ++i) {
        const auto& r = regions[i];
        if (!r.caption) throw Error("region " + std::to_string(i) + " (" + r.keyword + ") has no caption");
        CounterRng rng(seed, i);
        const bool with_class = rng.bernoulli(class_name_prob);
        nlohmann::json j{{"image", r.image},
                         {"mask", r.mask},
                         {"prompt", with_class ? prompt_with_class(r.keyword) : std::string(kDefaultPrompt)},
                         {"caption", *r.caption},
                         {"keyword", r.keyword},
                         {"source", to_string(r.source)},
                         {"confidence", r.confidence}};
        out += j.dump() + "\n";
    }
    return out;
}

inline void emit_training_set(const std::vector<LabeledRegion>& regions, const std::filesystem::path& out_path,
                              double class_name_prob, std::uint64_t seed) {
    const auto text = training_set_jsonl(regions, class_name_prob, seed);
    std::ofstream out(out_path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + out_path.string());
    out << text;
    if (!out.flush()) throw IoError("write failed: " + out_path.string());
}

// --- manifest and logs ---------------------------------------------------------------

/// JSONL lines of {"image": path, "regions": [{"mask", "class", "score"}]}.
inline std::vector<UnlabeledImage> parse_manifest(std::istream& in) {
    std::vector<UnlabeledImage> out;
    std::string line;
    for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            UnlabeledImage img;
            img.image = j.at("image").get<std::string>();
            for (const auto& r : j.at("regions"))
                img.candidates.push_back(
                    {r.value("mask", ""), r.at("class").get<std::string>(), r.value("score", 0.0)});
            out.push_back(std::move(img));
        } catch (const nlohmann::json::exception& e) {
            throw FormatError("manifest line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

inline std::vector<UnlabeledImage> read_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    return parse_manifest(in);
}

inline std::string rejections_csv(const std::vector<Rejection>& rejected) {
    std::ostringstream out;
    out << "image,region_index,class,confidence,reason\n";
    for (const auto& r : rejected) {
        char conf[32];
        std::snprintf(conf, sizeof conf, "%.6g", r.confidence);
        out << r.image << ',' << r.region_index << ',' << r.class_name << ',' << conf << ',' << to_string(r.reason) << '\n';
    }
    return out.str();
}

// --- synthetic implementations -------------------------------------------------------

/// "a <class>" for every candidate.
class TemplateDescriber final : public Describer {
public:
    std::string describe(const UnlabeledImage& image, std::size_t index) const override {
        return "a " + image.candidates.at(index).class_name;
    }
};

/// Returns the candidate's proposal score: a single scalar standing in for the
/// combined detector, segmenter and image-text confidences.
class ProposalScorer final : public SimilarityScorer {
public:
    double score(const std::string&, const UnlabeledImage& image, std::size_t index) const override {
        return image.candidates.at(index).proposal_score;
    }
};

/// Hashed bag-of-words feature vector, L2-normalised.
inline std::vector<double> text_features(const std::string& text, std::size_t dim = 64) {
    std::vector<double> f(dim, 0.0);
    for (auto w : split_words(text)) {
        std::transform(w.begin(), w.end(), w.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
        w.erase(std::remove_if(w.begin(), w.end(), [](unsigned char c) { return !std::isalnum(c); }), w.end());
        if (!w.empty()) f[std::hash<std::string>{}(w) % dim] += 1.0;
    }
    const double norm = std::sqrt(std::inner_product(f.begin(), f.end(), f.begin(), 0.0));
    if (norm > 0.0)
        for (auto& v : f) v /= norm;
    return f;
}

/// proposal score times the cosine similarity between caption and class name
/// features (nonnegative, so the product stays in [0, 1]).
class CosineScorer final : public SimilarityScorer {
public:
    double score(const std::string& caption, const UnlabeledImage& image, std::size_t index) const override {
        const auto& c = image.candidates.at(index);
        const auto a = text_features(caption);
        const auto b = text_features(c.class_name);
        const double cos = std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
        return std::clamp(c.proposal_score * cos, 0.0, 1.0);
    }
};

inline const std::vector<std::string>& synthetic_classes() {
    static const std::vector<std::string> k{"cat", "dog", "car", "tree", "lamp", "cup"};
    return k;
}

/// `count` images with 1..5 candidates each: random classes, uniform scores.
inline std::vector<UnlabeledImage> synthetic_images(std::size_t count, std::uint64_t seed) {
    const auto& classes = synthetic_classes();
    std::vector<UnlabeledImage> out;
    out.reserve(count);
    for (std::size_t k = 0; k < count; ++k) {
        CounterRng rng(seed, k);
        UnlabeledImage img;
        img.image = "synthetic/" + std::to_string(k) + ".ppm";
        const auto n = 1 + rng.below(5);
        for (std::size_t i = 0; i < n; ++i)
            img.candidates.push_back({img.image + "#" + std::to_string(i), classes[rng.below(classes.size())], rng.uniform()});
        out.push_back(std::move(img));
    }
    return out;
}

}  // namespace damkit::pipeline
