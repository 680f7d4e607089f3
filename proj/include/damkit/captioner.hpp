#pragma once

// Toy caption decoder: vision tokens are placed in front of the embedded text
// and a causal transformer predicts the next text token.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "damkit/backbone.hpp"
#include "damkit/error.hpp"
#include "damkit/geometry.hpp"
#include "damkit/nn.hpp"
#include "damkit/num/checkpoint.hpp"
#include "damkit/num/gradcheck.hpp"
#include "damkit/num/graph.hpp"
#include "damkit/num/optim.hpp"
#include "damkit/rng.hpp"

namespace damkit {

class Vocab {
public:
    static constexpr const char* kBos = "<bos>";
    static constexpr const char* kEos = "<eos>";
    static constexpr const char* kPad = "<pad>";

    Vocab() = default;
    explicit Vocab(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
        for (std::size_t i = 0; i < tokens_.size(); ++i)
            if (!index_.emplace(tokens_[i], static_cast<int>(i)).second)
                throw FormatError("duplicate vocabulary token '" + tokens_[i] + "'");
        for (const char* special : {kBos, kEos, kPad})
            if (!index_.count(special)) throw FormatError(std::string("vocabulary lacks ") + special);
    }

    /// 16 colour/shape words followed by the special tokens.
    static Vocab toy() {
        return Vocab({"red", "green", "blue", "yellow", "orange", "purple", "white", "black", "square", "circle",
                      "triangle", "stripe", "small", "large", "left", "right", kBos, kEos, kPad});
    }

    std::size_t size() const noexcept { return tokens_.size(); }
    const std::vector<std::string>& tokens() const noexcept { return tokens_; }

    int id(const std::string& token) const {
        auto it = index_.find(token);
        if (it == index_.end()) throw VocabOverflow("token '" + token + "' not in vocabulary");
        return it->second;
    }
    const std::string& token(int id) const {
        if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size())
            throw VocabOverflow("token id " + std::to_string(id) + " outside vocabulary of " +
                                std::to_string(tokens_.size()));
        return tokens_[static_cast<std::size_t>(id)];
    }
    bool contains(const std::string& token) const { return index_.count(token) != 0; }

    int bos() const { return id(kBos); }
    int eos() const { return id(kEos); }
    int pad() const { return id(kPad); }
    bool is_special(int id) const { return id == bos() || id == eos() || id == pad(); }

    std::vector<int> encode(const std::vector<std::string>& words) const {
        std::vector<int> out;
        out.reserve(words.size());
        for (const auto& w : words) out.push_back(id(w));
        return out;
    }
    std::vector<std::string> decode(const std::vector<int>& ids) const {
        std::vector<std::string> out;
        out.reserve(ids.size());
        for (auto i : ids) out.push_back(token(i));
        return out;
    }

private:
    std::vector<std::string> tokens_;
    std::map<std::string, int> index_;
};

struct CaptionSample {
    Image image;
    RegionMask mask;
    std::vector<int> target_tokens;  // BOS ... EOS
};

struct CaptionerConfig {
    BackboneConfig backbone;
    int decoder_layers = 2;
    int decoder_heads = 2;
    int max_text_len = 8;
    double alpha = kDefaultAlpha;
    int min_side = kDefaultMinSide;

    void validate() const {
        backbone.validate();
        if (decoder_layers < 1 || decoder_heads < 1 || max_text_len < 2)
            throw ShapeMismatch("decoder config fields out of range");
        if (backbone.dim % decoder_heads != 0) throw ShapeMismatch("dim not divisible by decoder heads");
    }
};

inline void to_json(nlohmann::json& j, const CaptionerConfig& c) {
    j = nlohmann::json(c.backbone);
    j["decoder_layers"] = c.decoder_layers;
    j["decoder_heads"] = c.decoder_heads;
    j["max_text_len"] = c.max_text_len;
    j["alpha"] = c.alpha;
    j["min_side"] = c.min_side;
}

inline void from_json(const nlohmann::json& j, CaptionerConfig& c) {
    c.backbone = j.get<BackboneConfig>();
    c.decoder_layers = j.value("decoder_layers", c.decoder_layers);
    c.decoder_heads = j.value("decoder_heads", c.decoder_heads);
    c.max_text_len = j.value("max_text_len", c.max_text_len);
    c.alpha = j.value("alpha", c.alpha);
    c.min_side = j.value("min_side", c.min_side);
}

template <class T>
struct DecoderParams {
    num::Param<T> tok_embed;  // [vocab, dim]
    num::Param<T> text_pos;   // [max_text_len, dim]
    std::vector<nn::Block<T>> blocks;
    nn::LayerNorm<T> final_norm;
    nn::Linear<T> out;  // [dim, vocab], starts at 0 so untrained logits are uniform

    static DecoderParams init(const CaptionerConfig& cfg, std::size_t vocab, std::uint64_t seed) {
        nn::Initializer init(seed ^ 0xDEC0DE5ULL);
        const auto dim = static_cast<std::size_t>(cfg.backbone.dim);
        const auto hidden = dim * static_cast<std::size_t>(cfg.backbone.ffn_mult);
        DecoderParams p;
        p.tok_embed = num::Param<T>("decoder.tok_embed", init.normal<T>({vocab, dim}, 1.0));
        p.text_pos = num::Param<T>("decoder.text_pos", init.normal<T>({static_cast<std::size_t>(cfg.max_text_len), dim}, 0.1));
        p.blocks.reserve(cfg.decoder_layers);
        for (int l = 0; l < cfg.decoder_layers; ++l)
            p.blocks.push_back(nn::Block<T>::make("decoder.blocks." + std::to_string(l), dim, hidden, init));
        p.final_norm = nn::LayerNorm<T>::make("decoder.final_norm", dim, init);
        p.out = nn::Linear<T>::zeros("decoder.out", dim, vocab, init);
        return p;
    }

    num::ParamRefs<T> refs() {
        num::ParamRefs<T> r{&tok_embed, &text_pos};
        for (auto& b : blocks) b.collect(r);
        final_norm.collect(r);
        out.collect(r);
        return r;
    }
};

/// Backbone plus decoder with their shared configuration.
template <class T>
struct CaptionerModel {
    CaptionerConfig config;
    Vocab vocab;
    BackboneParams<T> backbone;
    DecoderParams<T> decoder;

    static CaptionerModel init(const CaptionerConfig& cfg, Vocab vocab, std::uint64_t seed) {
        cfg.validate();
        CaptionerModel m;
        m.config = cfg;
        m.backbone = BackboneParams<T>::init(cfg.backbone, seed);
        m.decoder = DecoderParams<T>::init(cfg, vocab.size(), seed);
        m.vocab = std::move(vocab);
        return m;
    }

    num::ParamRefs<T> refs() {
        auto r = backbone.refs();
        auto d = decoder.refs();
        r.insert(r.end(), d.begin(), d.end());
        return r;
    }

    FocalPrompt prompt_for(const Image& image, const RegionMask& mask) const {
        return build_focal_prompt(image, mask, config.alpha, config.min_side, config.backbone.enc_res);
    }

    std::vector<unsigned char> checkpoint_bytes() {
        std::vector<const num::Param<T>*> ps;
        for (auto* p : refs()) ps.push_back(p);
        return num::serialize_params(ps);
    }

    void load_checkpoint(const std::vector<unsigned char>& bytes) {
        num::assign_params(num::deserialize_params(bytes), refs());
    }
};

/// Logits for every text position: [len(text_prefix), vocab].
template <class T>
num::Var<T> decode_logits(const VisionTokens<T>& vision, const std::vector<int>& text_prefix, DecoderParams<T>& params,
                          const CaptionerConfig& cfg) {
    auto& g = *vision.seq.graph;
    if (text_prefix.empty()) throw EmptyInput("decode_logits: empty text prefix");
    if (text_prefix.size() > static_cast<std::size_t>(cfg.max_text_len))
        throw ShapeMismatch("decode_logits: text length " + std::to_string(text_prefix.size()) + " exceeds " +
                            std::to_string(cfg.max_text_len));
    const std::size_t n_vis = vision.length();
    const std::size_t n_txt = text_prefix.size();
    const auto text = num::add(num::embedding_lookup(g.param(params.tok_embed), text_prefix),
                               num::slice_seq(g.param(params.text_pos), 0, n_txt));
    auto h = num::concat_seq(std::vector<num::Var<T>>{vision.seq, text});
    for (auto& block : params.blocks)
        h = nn::block_forward(h, block, static_cast<std::size_t>(cfg.decoder_heads), /*causal=*/true);
    h = nn::layer_norm(num::slice_seq(h, n_vis, n_vis + n_txt), params.final_norm);
    return nn::linear(h, params.out);
}

/// Index of the largest logit; ties go to the lowest id.
template <class T>
int argmax_row(std::span<const T> row) {
    int best = 0;
    for (std::size_t j = 1; j < row.size(); ++j)
        if (row[j] > row[static_cast<std::size_t>(best)]) best = static_cast<int>(j);
    return best;
}

/// Greedy decoding from BOS until EOS or max_len generated tokens. The
/// returned list excludes BOS and includes EOS when produced.
template <class T>
std::vector<int> greedy_decode(const num::Tensor<T>& vision, CaptionerModel<T>& model, std::size_t max_len) {
    if (max_len < 1) throw ShapeMismatch("greedy_decode: max_len must be >= 1");
    const std::size_t limit = std::min<std::size_t>(max_len, static_cast<std::size_t>(model.config.max_text_len) - 1);
    std::vector<int> prefix{model.vocab.bos()};
    std::vector<int> out;
    while (out.size() < limit) {
        num::Graph<T> g;
        const VisionTokens<T> vt{g.constant(vision), Provenance::Regional, 1};
        const auto logits = decode_logits(vt, prefix, model.decoder, model.config).value();
        const int next = argmax_row<T>(logits.row(logits.rows() - 1));
        out.push_back(next);
        if (next == model.vocab.eos()) break;
        prefix.push_back(next);
    }
    return out;
}

template <class T>
std::vector<int> describe(CaptionerModel<T>& model, const Image& image, const RegionMask& mask, std::size_t max_len) {
    return greedy_decode(encode_prompt(model.prompt_for(image, mask), model.backbone, model.config.backbone), model,
                         max_len);
}

/// Teacher-forced loss of one sample, built on `g`.
template <class T>
num::Var<T> sample_loss(num::Graph<T>& g, const FocalPrompt& prompt, const std::vector<int>& target,
                        CaptionerModel<T>& model) {
    if (target.size() < 2) throw EmptyInput("caption target needs BOS and at least one more token");
    const auto vision = backbone_forward(g, prompt, model.backbone, model.config.backbone);
    const std::vector<int> inputs(target.begin(), target.end() - 1);
    const std::vector<int> labels(target.begin() + 1, target.end());
    return num::cross_entropy_lastdim(decode_logits(vision, inputs, model.decoder, model.config), labels);
}

/// Fraction of caption content tokens (specials excluded) that greedy
/// decoding reproduces at the right position.
template <class T>
double greedy_token_accuracy(CaptionerModel<T>& model, const std::vector<FocalPrompt>& prompts,
                             const std::vector<std::vector<int>>& targets) {
    std::size_t total = 0, correct = 0;
    for (std::size_t i = 0; i < prompts.size(); ++i) {
        const auto& tgt = targets[i];
        const auto pred = greedy_decode(encode_prompt(prompts[i], model.backbone, model.config.backbone), model,
                                        tgt.size() - 1);
        for (std::size_t k = 1; k < tgt.size(); ++k) {
            if (model.vocab.is_special(tgt[k])) continue;
            ++total;
            if (k - 1 < pred.size() && pred[k - 1] == tgt[k]) ++correct;
        }
    }
    return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
}

struct TrainOptions {
    int epochs = 1;
    double lr = 3e-3;
    int batch_size = 8;
    std::uint64_t seed = 7;
    int max_steps = 0;             // 0: no cap
    double target_accuracy = 0.0;  // stop after an epoch reaching it; 0: never
};

struct EpochMetrics {
    int epoch = 0;
    int steps = 0;
    double loss = 0.0;
    double accuracy = 0.0;
};

struct TrainHistory {
    double initial_loss = 0.0;
    std::vector<EpochMetrics> epochs;
};

template <class T>
double mean_loss(CaptionerModel<T>& model, const std::vector<FocalPrompt>& prompts,
                 const std::vector<std::vector<int>>& targets) {
    double s = 0.0;
    for (std::size_t i = 0; i < prompts.size(); ++i) {
        num::Graph<T> g;
        s += sample_loss(g, prompts[i], targets[i], model).value()[0];
    }
    return prompts.empty() ? 0.0 : s / static_cast<double>(prompts.size());
}

/// Adam training over mini-batches. Accuracy is measured on `eval` when given,
/// otherwise on the training set. Deterministic for a fixed seed.
template <class T>
TrainHistory train_toy(CaptionerModel<T>& model, const std::vector<CaptionSample>& dataset, const TrainOptions& opt,
                       const std::vector<CaptionSample>* eval = nullptr,
                       const std::function<void(const EpochMetrics&)>& on_epoch = {}) {
    if (dataset.empty()) throw EmptyInput("train_toy: empty dataset");
    if (opt.batch_size < 1) throw ShapeMismatch("train_toy: batch_size must be >= 1");

    auto prepare = [&](const std::vector<CaptionSample>& data, std::vector<FocalPrompt>& prompts,
                       std::vector<std::vector<int>>& targets) {
        for (const auto& s : data) {
            if (s.target_tokens.empty() || s.target_tokens.back() != model.vocab.eos())
                throw FormatError("caption target must end with EOS");
            prompts.push_back(model.prompt_for(s.image, s.mask));
            targets.push_back(s.target_tokens);
        }
    };
    std::vector<FocalPrompt> prompts, eval_prompts;
    std::vector<std::vector<int>> targets, eval_targets;
    prepare(dataset, prompts, targets);
    if (eval) prepare(*eval, eval_prompts, eval_targets);
    const auto& acc_prompts = eval ? eval_prompts : prompts;
    const auto& acc_targets = eval ? eval_targets : targets;

    auto params = model.refs();
    TrainHistory hist;
    hist.initial_loss = mean_loss(model, prompts, targets);

    CounterRng rng(opt.seed);
    std::vector<std::size_t> order(prompts.size());
    int step = 0;
    for (int epoch = 1; epoch <= opt.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        damkit::shuffle(order, rng);
        double loss_sum = 0.0;
        std::size_t seen = 0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(opt.batch_size)) {
            if (opt.max_steps && step >= opt.max_steps) break;
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(opt.batch_size));
            const T inv = T{1} / static_cast<T>(end - start);
            num::zero_grads(params);
            for (std::size_t k = start; k < end; ++k) {
                num::Graph<T> g;
                const auto loss = sample_loss(g, prompts[order[k]], targets[order[k]], model);
                loss_sum += loss.value()[0];
                ++seen;
                g.backward(num::mul_scalar(loss, inv));
            }
            num::adam_step(params, num::AdamOptions{opt.lr});
            ++step;
        }
        EpochMetrics m;
        m.epoch = epoch;
        m.steps = step;
        m.loss = seen ? loss_sum / static_cast<double>(seen) : 0.0;
        m.accuracy = greedy_token_accuracy(model, acc_prompts, acc_targets);
        hist.epochs.push_back(m);
        if (on_epoch) on_epoch(m);
        if (opt.max_steps && step >= opt.max_steps) break;
        if (opt.target_accuracy > 0.0 && m.accuracy >= opt.target_accuracy) break;
    }
    return hist;
}

/// Moves every zero-initialized parameter (mask embedding, adapter gates,
/// decoder output) off zero so that all gradient paths carry signal.
template <class T>
void perturb_zero_init(CaptionerModel<T>& model, std::uint64_t seed) {
    CounterRng rng(seed, 0x5EED);
    auto jitter = [&](num::Param<T>& p, double lo, double hi) {
        for (std::size_t i = 0; i < p.value.size(); ++i) p.value[i] = static_cast<T>(rng.uniform(lo, hi));
    };
    jitter(model.backbone.mask_embed.w, -0.3, 0.3);
    jitter(model.backbone.mask_embed.b, -0.1, 0.1);
    for (auto& a : model.backbone.adapters) {
        jitter(a.gamma, 0.3, 0.9);
        jitter(a.beta, 0.3, 0.9);
    }
    jitter(model.decoder.out.w, -0.3, 0.3);
    jitter(model.decoder.out.b, -0.1, 0.1);
}

/// Central-difference check of the full backbone + decoder + cross-entropy
/// gradient on one random sample whose focal crop is a strict sub-window.
inline num::GradCheckReport end_to_end_grad_check(const CaptionerConfig& cfg, std::uint64_t seed,
                                                  num::GradCheckOptions opt = {}) {
    auto model = CaptionerModel<double>::init(cfg, Vocab::toy(), seed);
    perturb_zero_init(model, seed);

    CounterRng rng(seed, 0xDA7A);
    const int side = 2 * std::max(cfg.backbone.enc_res, cfg.min_side);
    Image image(side, side);
    for (int y = 0; y < side; ++y)
        for (int x = 0; x < side; ++x)
            for (int c = 0; c < Image::kChannels; ++c) image.at(x, y, c) = rng.uniform();
    RegionMask mask(side, side);
    const int x0 = side / 3, y0 = side / 4;
    mask.fill(PixelBox{x0, y0, x0 + side / 6, y0 + side / 5});
    const auto prompt = model.prompt_for(image, mask);

    const int content = static_cast<int>(model.vocab.size()) - 3;
    std::vector<int> target{model.vocab.bos()};
    for (int i = 0; i < 3; ++i) target.push_back(static_cast<int>(rng.below(static_cast<std::uint64_t>(content))));
    target.push_back(model.vocab.eos());

    return num::grad_check([&](num::Graph<double>& g) { return sample_loss(g, prompt, target, model); }, model.refs(),
                           opt);
}

}  // namespace damkit
