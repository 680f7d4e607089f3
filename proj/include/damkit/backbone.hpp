#pragma once

// Localized vision backbone.
//
//   x  = E_I(I)  + E_M(M)  + P      z  = f_G(x)
//   x' = E_I(I') + E_M(M') + P      z' = f_R(x', z)
//
// f_G and f_R run the same self-attention blocks. After block l, f_R adds a
// gated cross-attention adapter:
//   h' = h + tanh(gamma_l) * CrossAttn(h, z)
//   h  = h' + tanh(beta_l) * FFN(h')
// E_M, gamma and beta start at zero, so a fresh backbone reduces to the plain
// encoder on the focal view. z' keeps the token count of a single view.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "damkit/error.hpp"
#include "damkit/geometry.hpp"
#include "damkit/nn.hpp"
#include "damkit/num/graph.hpp"

namespace damkit {

struct BackboneConfig {
    int enc_res = 32;
    int patch = 4;
    int dim = 32;
    int heads = 2;
    int layers = 2;
    int ffn_mult = 4;
    int adapter_heads = 2;

    int grid() const noexcept { return enc_res / patch; }
    std::size_t tokens() const noexcept { return static_cast<std::size_t>(grid()) * grid(); }
    std::size_t image_patch_size() const noexcept { return static_cast<std::size_t>(patch) * patch * 3; }
    std::size_t mask_patch_size() const noexcept { return static_cast<std::size_t>(patch) * patch; }

    void validate() const {
        if (enc_res < 1 || patch < 1 || dim < 1 || heads < 1 || layers < 1 || ffn_mult < 1 || adapter_heads < 1)
            throw ShapeMismatch("backbone config fields must be positive");
        if (enc_res % patch != 0)
            throw ShapeMismatch("enc_res " + std::to_string(enc_res) + " not divisible by patch " + std::to_string(patch));
        if (dim % heads != 0 || dim % adapter_heads != 0)
            throw ShapeMismatch("dim " + std::to_string(dim) + " not divisible by head counts");
        if (dim % 4 != 0) throw ShapeMismatch("dim must be a multiple of 4 for 2-D positional encoding");
    }

    friend bool operator==(const BackboneConfig&, const BackboneConfig&) = default;
};

inline void to_json(nlohmann::json& j, const BackboneConfig& c) {
    j = {{"enc_res", c.enc_res}, {"patch", c.patch},         {"dim", c.dim},
         {"heads", c.heads},     {"layers", c.layers},       {"ffn_mult", c.ffn_mult},
         {"adapter_heads", c.adapter_heads}};
}

// Missing fields keep their defaults.
inline void from_json(const nlohmann::json& j, BackboneConfig& c) {
    c.enc_res = j.value("enc_res", c.enc_res);
    c.patch = j.value("patch", c.patch);
    c.dim = j.value("dim", c.dim);
    c.heads = j.value("heads", c.heads);
    c.layers = j.value("layers", c.layers);
    c.ffn_mult = j.value("ffn_mult", c.ffn_mult);
    c.adapter_heads = j.value("adapter_heads", c.adapter_heads);
}

enum class Provenance { Global, Regional };

template <class T>
struct VisionTokens {
    num::Var<T> seq;  // [tokens, dim], or [frames * tokens, dim] for video
    Provenance provenance = Provenance::Global;
    std::size_t frames = 1;

    std::size_t length() const { return seq.value().rows(); }
};

/// Fixed 2-D sinusoidal table: the first half of the width encodes the patch
/// row, the second half the column.
template <class T>
num::Tensor<T> sinusoidal_positions_2d(int grid, int dim) {
    num::Tensor<T> pos({static_cast<std::size_t>(grid) * grid, static_cast<std::size_t>(dim)});
    const int half = dim / 2;
    const int quarter = half / 2;
    for (int r = 0; r < grid; ++r)
        for (int c = 0; c < grid; ++c) {
            const std::size_t t = static_cast<std::size_t>(r) * grid + c;
            for (int i = 0; i < quarter; ++i) {
                const double freq = std::pow(100.0, -static_cast<double>(i) / quarter);
                pos.at(t, 2 * i) = static_cast<T>(std::sin(r * freq));
                pos.at(t, 2 * i + 1) = static_cast<T>(std::cos(r * freq));
                pos.at(t, half + 2 * i) = static_cast<T>(std::sin(c * freq));
                pos.at(t, half + 2 * i + 1) = static_cast<T>(std::cos(c * freq));
            }
        }
    return pos;
}

template <class T>
struct GatedAdapter {
    nn::LayerNorm<T> ln_query;
    nn::Attention<T> cross_attn;
    nn::LayerNorm<T> ln_ffn;
    nn::Ffn<T> ffn;
    num::Param<T> gamma;  // cross-attention gate, starts at 0
    num::Param<T> beta;   // FFN gate, starts at 0

    void collect(num::ParamRefs<T>& out) {
        ln_query.collect(out);
        cross_attn.collect(out);
        ln_ffn.collect(out);
        ffn.collect(out);
        out.push_back(&gamma);
        out.push_back(&beta);
    }
};

template <class T>
struct BackboneParams {
    nn::Linear<T> img_embed;   // E_I
    nn::Linear<T> mask_embed;  // E_M, starts at 0
    num::Param<T> pos;         // P, shared by both views
    std::vector<nn::Block<T>> blocks;  // shared by f_G and f_R
    std::vector<GatedAdapter<T>> adapters;
    nn::LayerNorm<T> final_norm;

    static BackboneParams init(const BackboneConfig& cfg, std::uint64_t seed) {
        cfg.validate();
        nn::Initializer init(seed);
        const auto dim = static_cast<std::size_t>(cfg.dim);
        const auto hidden = dim * static_cast<std::size_t>(cfg.ffn_mult);
        BackboneParams p;
        p.img_embed = nn::Linear<T>::make("backbone.img_embed", cfg.image_patch_size(), dim, init);
        p.mask_embed = nn::Linear<T>::zeros("backbone.mask_embed", cfg.mask_patch_size(), dim, init);
        p.pos = num::Param<T>("backbone.pos", sinusoidal_positions_2d<T>(cfg.grid(), cfg.dim));
        p.blocks.reserve(cfg.layers);
        p.adapters.reserve(cfg.layers);
        for (int l = 0; l < cfg.layers; ++l)
            p.blocks.push_back(nn::Block<T>::make("backbone.blocks." + std::to_string(l), dim, hidden, init));
        for (int l = 0; l < cfg.layers; ++l) {
            const std::string name = "backbone.adapters." + std::to_string(l);
            GatedAdapter<T> a{nn::LayerNorm<T>::make(name + ".ln_query", dim, init),
                              nn::Attention<T>::make(name + ".cross_attn", dim, init),
                              nn::LayerNorm<T>::make(name + ".ln_ffn", dim, init),
                              nn::Ffn<T>::make(name + ".ffn", dim, hidden, init),
                              num::Param<T>(name + ".gamma", num::Tensor<T>::scalar(T{0})),
                              num::Param<T>(name + ".beta", num::Tensor<T>::scalar(T{0}))};
            p.adapters.push_back(std::move(a));
        }
        p.final_norm = nn::LayerNorm<T>::make("backbone.final_norm", dim, init);
        return p;
    }

    BackboneParams() = default;
    BackboneParams(BackboneParams&&) noexcept = default;
    BackboneParams& operator=(BackboneParams&&) noexcept = default;
    BackboneParams(const BackboneParams&) = default;
    BackboneParams& operator=(const BackboneParams&) = default;

    num::ParamRefs<T> refs() {
        num::ParamRefs<T> out;
        img_embed.collect(out);
        mask_embed.collect(out);
        out.push_back(&pos);
        for (auto& b : blocks) b.collect(out);
        for (auto& a : adapters) a.collect(out);
        final_norm.collect(out);
        return out;
    }
};

namespace detail {

inline void require_enc_res(int w, int h, const BackboneConfig& cfg, const char* what) {
    if (w != cfg.enc_res || h != cfg.enc_res)
        throw ShapeMismatch(std::string(what) + " is " + std::to_string(w) + "x" + std::to_string(h) +
                            ", encoder expects " + std::to_string(cfg.enc_res) + "x" + std::to_string(cfg.enc_res));
}

}  // namespace detail

/// Patch rows in row-major grid order; each row is the patch's pixels in
/// row-major order with RGB interleaved.
template <class T>
num::Tensor<T> image_patches(const Image& image, const BackboneConfig& cfg) {
    detail::require_enc_res(image.width(), image.height(), cfg, "image");
    const int g = cfg.grid(), p = cfg.patch;
    num::Tensor<T> out({cfg.tokens(), cfg.image_patch_size()});
    for (int gy = 0; gy < g; ++gy)
        for (int gx = 0; gx < g; ++gx) {
            T* row = out.data() + (static_cast<std::size_t>(gy) * g + gx) * cfg.image_patch_size();
            std::size_t k = 0;
            for (int y = 0; y < p; ++y)
                for (int x = 0; x < p; ++x)
                    for (int c = 0; c < Image::kChannels; ++c)
                        row[k++] = static_cast<T>(image.at(gx * p + x, gy * p + y, c));
        }
    return out;
}

template <class T>
num::Tensor<T> mask_patches(const RegionMask& mask, const BackboneConfig& cfg) {
    detail::require_enc_res(mask.width(), mask.height(), cfg, "mask");
    const int g = cfg.grid(), p = cfg.patch;
    num::Tensor<T> out({cfg.tokens(), cfg.mask_patch_size()});
    for (int gy = 0; gy < g; ++gy)
        for (int gx = 0; gx < g; ++gx) {
            T* row = out.data() + (static_cast<std::size_t>(gy) * g + gx) * cfg.mask_patch_size();
            std::size_t k = 0;
            for (int y = 0; y < p; ++y)
                for (int x = 0; x < p; ++x) row[k++] = mask.at(gx * p + x, gy * p + y) ? T{1} : T{0};
        }
    return out;
}

/// x = E_I(patches(image)) + E_M(patches(mask)) + P
template <class T>
VisionTokens<T> embed_view(num::Graph<T>& g, const Image& image, const RegionMask& mask, BackboneParams<T>& params,
                           const BackboneConfig& cfg, Provenance provenance = Provenance::Global) {
    const auto img = nn::linear(g.constant(image_patches<T>(image, cfg)), params.img_embed);
    const auto msk = nn::linear(g.constant(mask_patches<T>(mask, cfg)), params.mask_embed);
    return {num::add(num::add(img, msk), g.param(params.pos)), provenance, 1};
}

/// Embedding of a view with no mask channel at all: E_I(patches(image)) + P.
template <class T>
VisionTokens<T> embed_image_only(num::Graph<T>& g, const Image& image, BackboneParams<T>& params,
                                 const BackboneConfig& cfg) {
    const auto img = nn::linear(g.constant(image_patches<T>(image, cfg)), params.img_embed);
    return {num::add(img, g.param(params.pos)), Provenance::Global, 1};
}

namespace detail {

inline void require_tokens(std::size_t rows, std::size_t cols, const BackboneConfig& cfg, const char* what) {
    if (rows != cfg.tokens() || cols != static_cast<std::size_t>(cfg.dim))
        throw ShapeMismatch(std::string(what) + " is " + num::shape_str({rows, cols}) + ", expected " +
                            num::shape_str({cfg.tokens(), static_cast<std::size_t>(cfg.dim)}));
}

}  // namespace detail

/// z = f_G(x): the shared blocks without adapters, then the final norm.
template <class T>
VisionTokens<T> encode_global(const VisionTokens<T>& x, BackboneParams<T>& params, const BackboneConfig& cfg) {
    detail::require_tokens(x.seq.value().rows(), x.seq.value().cols(), cfg, "global input");
    auto h = x.seq;
    for (auto& block : params.blocks) h = nn::block_forward(h, block, static_cast<std::size_t>(cfg.heads));
    return {nn::layer_norm(h, params.final_norm), Provenance::Global, 1};
}

/// One gated adapter step on the regional stream.
template <class T>
num::Var<T> apply_adapter(num::Var<T> h, num::Var<T> z, GatedAdapter<T>& a, std::size_t heads) {
    auto& g = *h.graph;
    const auto cross = nn::attention(nn::layer_norm(h, a.ln_query), z, a.cross_attn, heads);
    h = num::add(h, num::scale(cross, num::tanh(g.param(a.gamma))));
    const auto ffn = nn::feed_forward(nn::layer_norm(h, a.ln_ffn), a.ffn);
    return num::add(h, num::scale(ffn, num::tanh(g.param(a.beta))));
}

/// z' = f_R(x', z): shared block l, then adapter l attending to the final
/// global features z.
template <class T>
VisionTokens<T> encode_regional(const VisionTokens<T>& x_focal, const VisionTokens<T>& z, BackboneParams<T>& params,
                                const BackboneConfig& cfg) {
    detail::require_tokens(x_focal.seq.value().rows(), x_focal.seq.value().cols(), cfg, "regional input");
    detail::require_tokens(z.seq.value().rows(), z.seq.value().cols(), cfg, "global context");
    auto h = x_focal.seq;
    for (std::size_t l = 0; l < params.blocks.size(); ++l) {
        h = nn::block_forward(h, params.blocks[l], static_cast<std::size_t>(cfg.heads));
        h = apply_adapter(h, z.seq, params.adapters[l], static_cast<std::size_t>(cfg.adapter_heads));
    }
    return {nn::layer_norm(h, params.final_norm), Provenance::Regional, 1};
}

/// Full single-frame backbone: returns z' with exactly cfg.tokens() rows.
template <class T>
VisionTokens<T> backbone_forward(num::Graph<T>& g, const FocalPrompt& prompt, BackboneParams<T>& params,
                                 const BackboneConfig& cfg) {
    const auto x = embed_view(g, prompt.full_image, prompt.full_mask, params, cfg, Provenance::Global);
    const auto z = encode_global(x, params, cfg);
    const auto x_focal = embed_view(g, prompt.focal_image, prompt.focal_mask, params, cfg, Provenance::Regional);
    return encode_regional(x_focal, z, params, cfg);
}

inline constexpr std::size_t kMaxVideoFrames = 8;

/// Per-frame z' concatenated along the sequence axis.
template <class T>
VisionTokens<T> backbone_forward_video(num::Graph<T>& g, const std::vector<FocalPrompt>& frames,
                                       BackboneParams<T>& params, const BackboneConfig& cfg) {
    if (frames.empty()) throw EmptyInput("video needs at least one frame");
    if (frames.size() > kMaxVideoFrames)
        throw ShapeMismatch("video has " + std::to_string(frames.size()) + " frames, at most " +
                            std::to_string(kMaxVideoFrames) + " are supported");
    for (const auto& f : frames)
        if (f.source_width != frames.front().source_width || f.source_height != frames.front().source_height)
            throw ShapeMismatch("video frames differ in size");
    std::vector<num::Var<T>> parts;
    parts.reserve(frames.size());
    for (const auto& f : frames) parts.push_back(backbone_forward(g, f, params, cfg).seq);
    return {frames.size() == 1 ? parts.front() : num::concat_seq(parts), Provenance::Regional, frames.size()};
}

/// Plain encoder on the focal view with the mask ignored; the reference a
/// freshly initialized backbone must reproduce.
template <class T>
num::Tensor<T> plain_focal_encoding(const FocalPrompt& prompt, BackboneParams<T>& params, const BackboneConfig& cfg) {
    num::Graph<T> g;
    return encode_global(embed_image_only(g, prompt.focal_image, params, cfg), params, cfg).seq.value();
}

/// Inference helper: z' as a plain tensor.
template <class T>
num::Tensor<T> encode_prompt(const FocalPrompt& prompt, BackboneParams<T>& params, const BackboneConfig& cfg) {
    num::Graph<T> g;
    return backbone_forward(g, prompt, params, cfg).seq.value();
}

}  // namespace damkit
