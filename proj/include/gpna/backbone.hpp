#pragma once
// Perceiver-style trunk: a learned latent array cross-attends to the token set,
// then a stack of latent self-attention blocks refines it. Blocks are pre-norm
// residual (normalize -> attend/MLP -> add).

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gpna/error.hpp"
#include "gpna/numerics/ops.hpp"
#include "gpna/numerics/params.hpp"
#include "gpna/random.hpp"
#include "gpna/tokenizer.hpp"

namespace gpna::model {

using num::Tape;
using num::Tensor;

struct LayerNormParams {
    Tensor gain, bias;

    static LayerNormParams create(num::ParamStore& store, const std::string& prefix, std::size_t width)
    {
        return {store.add(prefix + ".gain", {width}, std::vector<double>(width, 1.0)),
                store.add(prefix + ".bias", {width}, std::vector<double>(width, 0.0))};
    }

    Tensor apply(Tape& tape, const Tensor& x, double eps) const { return num::layer_normalize(tape, x, gain, bias, eps); }
};

struct LinearParams {
    Tensor weight, bias;  // [in, out], [out]; bias may be undefined

    static LinearParams create(num::ParamStore& store, const std::string& prefix, std::size_t in, std::size_t out,
                               Rng& rng, bool with_bias = true)
    {
        LinearParams p;
        p.weight = store.add(prefix + ".weight", {in, out},
                             normal_values(rng, in * out, 1.0 / std::sqrt(static_cast<double>(in))));
        if (with_bias)
            p.bias = store.add(prefix + ".bias", {out}, std::vector<double>(out, 0.0));
        return p;
    }

    Tensor apply(Tape& tape, const Tensor& x) const
    {
        return bias.defined() ? num::linear(tape, x, weight, bias) : num::matmul(tape, x, weight);
    }
};

/// Projections of one multi-head attention layer. Queries come from width
/// `query_dim`, keys/values from `source_dim`; both are projected to `model_dim`.
struct AttentionParams {
    LinearParams q, k, v, out;
    std::size_t heads = 1;

    static AttentionParams create(num::ParamStore& store, const std::string& prefix, std::size_t query_dim,
                                  std::size_t source_dim, std::size_t model_dim, std::size_t heads, Rng& rng)
    {
        if (heads == 0 || model_dim % heads != 0)
            throw ConfigError("attention width " + std::to_string(model_dim) + " is not divisible by " +
                              std::to_string(heads) + " heads");
        return {LinearParams::create(store, prefix + ".q", query_dim, model_dim, rng),
                // A key bias shifts every logit of a query row equally, so softmax cancels it.
                LinearParams::create(store, prefix + ".k", source_dim, model_dim, rng, false),
                LinearParams::create(store, prefix + ".v", source_dim, model_dim, rng),
                LinearParams::create(store, prefix + ".out", model_dim, model_dim, rng),
                heads};
    }

    std::size_t model_dim() const { return out.weight.dim(1); }
};

/// Expands a per-source key mask [B * s] to the logits layout [B * heads, q, s].
inline std::vector<std::uint8_t> expand_key_mask(std::span<const std::uint8_t> key_mask, std::size_t batch,
                                                 std::size_t heads, std::size_t queries, std::size_t sources)
{
    std::vector<std::uint8_t> out(batch * heads * queries * sources);
    for (std::size_t b = 0; b < batch; ++b) {
        bool any = false;
        for (std::size_t s = 0; s < sources; ++s)
            any = any || key_mask[b * sources + s] != 0;
        if (!any)
            throw MaskError("attention: every source position of batch element " + std::to_string(b) +
                            " is masked");
        for (std::size_t h = 0; h < heads; ++h)
            for (std::size_t q = 0; q < queries; ++q)
                std::copy_n(key_mask.data() + b * sources, sources,
                            out.data() + ((b * heads + h) * queries + q) * sources);
    }
    return out;
}

/// Multi-head scaled dot-product attention without residual or normalization.
/// queries [B, q, Dq], source [B, s, Ds], key_mask [B * s] (nonzero = attend; empty = all).
/// Returns [B, q, D].
inline Tensor multi_head_attention(Tape& tape, const Tensor& queries, const Tensor& source,
                                   std::span<const std::uint8_t> key_mask, const AttentionParams& p)
{
    if (queries.rank() != 3 || source.rank() != 3 || queries.dim(0) != source.dim(0))
        throw ShapeError("attention: queries " + num::to_string(queries.shape()) + " and source " +
                         num::to_string(source.shape()) + " must be [B, n, width] with equal B");
    if (source.dim(2) != p.k.weight.dim(0) || queries.dim(2) != p.q.weight.dim(0))
        throw ShapeError("attention: width mismatch, queries " + num::to_string(queries.shape()) + " source " +
                         num::to_string(source.shape()) + " projections expect " +
                         std::to_string(p.q.weight.dim(0)) + "/" + std::to_string(p.k.weight.dim(0)));
    const std::size_t B = queries.dim(0), nq = queries.dim(1), ns = source.dim(1);
    const std::size_t D = p.model_dim(), h = p.heads, dh = D / h;
    if (!key_mask.empty() && key_mask.size() != B * ns)
        throw ShapeError("attention: key mask has " + std::to_string(key_mask.size()) + " entries, expected " +
                         std::to_string(B * ns));

    auto split = [&](const Tensor& x, std::size_t n) {
        Tensor r = num::reshape(tape, x, {B, n, h, dh});
        r = num::permute(tape, r, {0, 2, 1, 3});
        return num::reshape(tape, r, {B * h, n, dh});
    };
    Tensor q = split(p.q.apply(tape, queries), nq);
    Tensor k = split(p.k.apply(tape, source), ns);
    Tensor v = split(p.v.apply(tape, source), ns);

    Tensor logits = num::scale(tape, num::bmm(tape, q, k, true), 1.0 / std::sqrt(static_cast<double>(dh)));
    Tensor weights;
    if (key_mask.empty()) {
        weights = num::softmax_rows(tape, logits);
    } else {
        const auto full = expand_key_mask(key_mask, B, h, nq, ns);
        weights = num::softmax_rows(tape, logits, full);
    }
    Tensor o = num::bmm(tape, weights, v);  // [B*h, q, dh]
    o = num::reshape(tape, o, {B, h, nq, dh});
    o = num::permute(tape, o, {0, 2, 1, 3});
    o = num::reshape(tape, o, {B, nq, D});
    return p.out.apply(tape, o);
}

struct MlpParams {
    LinearParams hidden, out;

    static MlpParams create(num::ParamStore& store, const std::string& prefix, std::size_t in, std::size_t hidden_dim,
                            std::size_t out_dim, Rng& rng)
    {
        return {LinearParams::create(store, prefix + ".fc1", in, hidden_dim, rng),
                LinearParams::create(store, prefix + ".fc2", hidden_dim, out_dim, rng)};
    }

    Tensor apply(Tape& tape, const Tensor& x) const
    {
        return out.apply(tape, num::gelu(tape, hidden.apply(tape, x)));
    }
};

/// Pre-norm cross-attention block: x + attn(LN(x), LN(source)).
struct CrossAttentionBlock {
    LayerNormParams norm_q, norm_kv;
    AttentionParams attn;

    static CrossAttentionBlock create(num::ParamStore& store, const std::string& prefix, std::size_t query_dim,
                                      std::size_t source_dim, std::size_t heads, Rng& rng)
    {
        return {LayerNormParams::create(store, prefix + ".norm_q", query_dim),
                LayerNormParams::create(store, prefix + ".norm_kv", source_dim),
                AttentionParams::create(store, prefix + ".attn", query_dim, source_dim, query_dim, heads, rng)};
    }

    Tensor apply(Tape& tape, const Tensor& x, const Tensor& source, std::span<const std::uint8_t> key_mask,
                 double eps) const
    {
        Tensor a = multi_head_attention(tape, norm_q.apply(tape, x, eps), norm_kv.apply(tape, source, eps), key_mask,
                                        attn);
        return num::add(tape, x, a);
    }
};

/// Pre-norm self-attention block followed by a pre-norm MLP block.
struct LatentBlock {
    LayerNormParams norm_attn, norm_mlp;
    AttentionParams attn;
    MlpParams mlp;

    static LatentBlock create(num::ParamStore& store, const std::string& prefix, std::size_t dim, std::size_t heads,
                              std::size_t hidden, Rng& rng)
    {
        return {LayerNormParams::create(store, prefix + ".norm_attn", dim),
                LayerNormParams::create(store, prefix + ".norm_mlp", dim),
                AttentionParams::create(store, prefix + ".attn", dim, dim, dim, heads, rng),
                MlpParams::create(store, prefix + ".mlp", dim, hidden, dim, rng)};
    }

    Tensor apply(Tape& tape, const Tensor& x, double eps) const
    {
        Tensor n = norm_attn.apply(tape, x, eps);
        Tensor y = num::add(tape, x, multi_head_attention(tape, n, n, {}, attn));
        return num::add(tape, y, mlp.apply(tape, norm_mlp.apply(tape, y, eps)));
    }
};

struct BackboneConfig {
    std::size_t n_latents = 64;
    std::size_t latent_dim = 128;
    std::size_t n_self_layers = 4;
    std::size_t n_heads = 4;
    std::size_t mlp_ratio = 2;
    double init_std = 0.02;
    double ln_eps = 1e-5;

    void validate() const
    {
        if (n_latents == 0 || latent_dim == 0 || n_heads == 0 || mlp_ratio == 0)
            throw ConfigError("backbone sizes must be positive");
        if (latent_dim % n_heads != 0)
            throw ConfigError("latent_dim " + std::to_string(latent_dim) + " is not divisible by n_heads " +
                              std::to_string(n_heads));
        if (!(init_std > 0.0) || !(ln_eps > 0.0))
            throw ConfigError("backbone init_std and ln_eps must be positive");
    }
};

/// One parameter set and one forward path, whatever produced the tokens.
class Backbone {
public:
    Backbone(num::ParamStore& store, BackboneConfig config, std::size_t token_width, std::uint64_t seed)
        : config_(config), token_width_(token_width)
    {
        config_.validate();
        Rng rng(seed);
        const std::size_t D = config_.latent_dim, hidden = D * config_.mlp_ratio;
        latents_ = store.add("backbone.latents", {config_.n_latents, D},
                             normal_values(rng, config_.n_latents * D, config_.init_std));
        cross_ = CrossAttentionBlock::create(store, "backbone.cross", D, token_width, config_.n_heads, rng);
        cross_norm_mlp_ = LayerNormParams::create(store, "backbone.cross.norm_mlp", D);
        cross_mlp_ = MlpParams::create(store, "backbone.cross.mlp", D, hidden, D, rng);
        for (std::size_t i = 0; i < config_.n_self_layers; ++i)
            layers_.push_back(LatentBlock::create(store, "backbone.self" + std::to_string(i), D, config_.n_heads,
                                                  hidden, rng));
    }

    const BackboneConfig& config() const { return config_; }
    std::size_t token_width() const { return token_width_; }
    const Tensor& latent_array() const { return latents_; }

    /// tokens [B, n, C] with key mask [B * n] -> latents [B, N, D].
    Tensor encode(Tape& tape, const Tensor& tokens, std::span<const std::uint8_t> mask) const
    {
        if (tokens.rank() != 3 || tokens.dim(2) != token_width_)
            throw ShapeError("backbone: tokens " + num::to_string(tokens.shape()) + " do not have width " +
                             std::to_string(token_width_));
        Tensor x = cross_attend(tape, tokens, mask);
        for (const auto& layer : layers_)
            x = layer.apply(tape, x, config_.ln_eps);
        return x;
    }

    /// Pads every token matrix to `pad_to` (at least the longest) and encodes them as one batch.
    Tensor encode(Tape& tape, const std::vector<tok::TokenMatrix>& batch, std::size_t pad_to = 0) const
    {
        if (batch.empty())
            throw InputError("backbone: empty batch");
        std::size_t n = pad_to;
        for (const auto& tm : batch) {
            if (tm.n_tokens() == 0)
                throw InputError("backbone: empty token matrix");
            if (tm.width() != token_width_)
                throw ShapeError("backbone: token width " + std::to_string(tm.width()) + " does not match " +
                                 std::to_string(token_width_));
            n = std::max(n, tm.n_tokens());
        }
        std::vector<Tensor> rows;
        std::vector<std::uint8_t> mask;
        mask.reserve(batch.size() * n);
        for (const auto& tm : batch) {
            auto padded = tok::pad_tokens(tape, tm, n);
            rows.push_back(num::reshape(tape, padded.tokens, {1, n, token_width_}));
            mask.insert(mask.end(), padded.valid_mask.begin(), padded.valid_mask.end());
        }
        Tensor tokens = rows.size() == 1 ? rows.front() : num::concat(tape, rows, 0);
        return encode(tape, tokens, mask);
    }

    std::size_t n_layers() const { return layers_.size(); }

    /// Latents after the cross-attention and its MLP, before any self-attention.
    Tensor cross_attend(Tape& tape, const Tensor& tokens, std::span<const std::uint8_t> mask) const
    {
        const double eps = config_.ln_eps;
        Tensor x = num::broadcast_batch(tape, latents_, tokens.dim(0));
        x = cross_.apply(tape, x, tokens, mask, eps);
        return num::add(tape, x, cross_mlp_.apply(tape, cross_norm_mlp_.apply(tape, x, eps)));
    }

private:
    BackboneConfig config_;
    std::size_t token_width_;
    Tensor latents_;
    CrossAttentionBlock cross_;
    LayerNormParams cross_norm_mlp_;
    MlpParams cross_mlp_;
    std::vector<LatentBlock> layers_;
};

}  // namespace gpna::model
