#pragma once
// Task heads reading the backbone latents through cross-attention.
//   pooled (classification / regression): one learned query -> one vector -> MLP
//   segmentation: one Fourier-encoded query per output pixel -> shared per-pixel MLP

#include <map>
#include <set>
#include <string>
#include <vector>

#include "gpna/backbone.hpp"
#include "gpna/encoding.hpp"

namespace gpna::model {

enum class HeadKind { classification, regression, segmentation };

inline std::string to_string(HeadKind k)
{
    switch (k) {
    case HeadKind::classification:
        return "classification";
    case HeadKind::regression:
        return "regression";
    case HeadKind::segmentation:
        return "segmentation";
    }
    return "regression";
}

inline HeadKind parse_head_kind(const std::string& s)
{
    if (s == "classification")
        return HeadKind::classification;
    if (s == "regression")
        return HeadKind::regression;
    if (s == "segmentation")
        return HeadKind::segmentation;
    throw ConfigError("unknown head kind '" + s + "'");
}

struct HeadSpec {
    std::string id;
    HeadKind kind = HeadKind::classification;
    std::size_t classes = 2;  // classification, segmentation
    std::size_t outputs = 1;  // regression
    std::size_t height = 0;   // segmentation
    std::size_t width = 0;

    void validate() const
    {
        if (id.empty())
            throw ConfigError("head needs an id");
        switch (kind) {
        case HeadKind::classification:
            if (classes < 2)
                throw ConfigError("classification head '" + id + "' needs at least two classes");
            break;
        case HeadKind::regression:
            if (outputs == 0)
                throw ConfigError("regression head '" + id + "' needs a positive output width");
            break;
        case HeadKind::segmentation:
            if (classes < 2 || height == 0 || width == 0)
                throw ConfigError("segmentation head '" + id + "' needs positive height, width and >= 2 classes");
            break;
        }
    }

    /// Width of the per-query output vector.
    std::size_t output_width() const { return kind == HeadKind::regression ? outputs : classes; }
    std::size_t n_queries() const { return kind == HeadKind::segmentation ? height * width : 1; }
};

/// Directional (or concatenated) Fourier encodings of normalized pixel centers, [H * W, E] row-major.
inline std::vector<double> pixel_query_encodings(std::size_t height, std::size_t width,
                                                 const encoding::FrequencyBank& bank)
{
    std::vector<double> out;
    for (std::size_t i = 0; i < height; ++i)
        for (std::size_t j = 0; j < width; ++j) {
            const std::array<double, 2> pos{(static_cast<double>(i) + 0.5) / static_cast<double>(height),
                                            (static_cast<double>(j) + 0.5) / static_cast<double>(width)};
            auto e = bank.mode() == encoding::BankMode::directional ? encoding::encode_directional(pos, bank)
                                                                     : encoding::encode_vector(pos, bank);
            out.insert(out.end(), e.begin(), e.end());
        }
    return out;
}

struct HeadParams {
    // pooled heads: learned query [1, D]; segmentation: projection of pixel encodings to D
    Tensor query;
    LinearParams query_proj;
    CrossAttentionBlock cross;
    MlpParams mlp;
    std::vector<double> query_encodings;  // segmentation only, [H * W, E]
    std::size_t encoding_width = 0;
};

class Head {
public:
    Head(num::ParamStore& store, HeadSpec spec, const BackboneConfig& bb, const encoding::FrequencyBank& query_bank,
         std::uint64_t seed)
        : spec_(std::move(spec))
    {
        spec_.validate();
        Rng rng(fnv1a(spec_.id, seed));
        const std::size_t D = bb.latent_dim;
        const std::string prefix = "head." + spec_.id;
        if (spec_.kind == HeadKind::segmentation) {
            params_.query_encodings = pixel_query_encodings(spec_.height, spec_.width, query_bank);
            params_.encoding_width = params_.query_encodings.size() / (spec_.height * spec_.width);
            params_.query_proj = LinearParams::create(store, prefix + ".query_proj", params_.encoding_width, D, rng);
        } else {
            params_.query = store.add(prefix + ".query", {1, D}, normal_values(rng, D, bb.init_std));
        }
        params_.cross = CrossAttentionBlock::create(store, prefix + ".cross", D, D, bb.n_heads, rng);
        params_.mlp = MlpParams::create(store, prefix + ".mlp", D, 2 * D, spec_.output_width(), rng);
        eps_ = bb.ln_eps;
    }

    const HeadSpec& spec() const { return spec_; }
    const HeadParams& params() const { return params_; }
    double eps() const { return eps_; }

    /// latents [B, N, D] -> [B, output_width] for pooled heads, [B, H*W, classes] for segmentation.
    Tensor forward(Tape& tape, const Tensor& latents) const
    {
        if (spec_.kind == HeadKind::segmentation)
            return forward_queries(tape, latents, params_.query_encodings);
        return pooled(tape, latents);
    }

    /// Segmentation with caller-supplied query encodings [H * W, E].
    Tensor forward_queries(Tape& tape, const Tensor& latents, const std::vector<double>& encodings) const
    {
        if (spec_.kind != HeadKind::segmentation)
            throw ConfigError("head '" + spec_.id + "' is not a segmentation head");
        const std::size_t P = spec_.height * spec_.width;
        if (encodings.size() != P * params_.encoding_width)
            throw ShapeError("segmentation head '" + spec_.id + "': query encodings have the wrong size");
        Tensor enc = Tensor::constant({P, params_.encoding_width}, encodings);
        Tensor q = num::broadcast_batch(tape, params_.query_proj.apply(tape, enc), latents.dim(0));
        Tensor z = params_.cross.apply(tape, q, latents, {}, eps_);
        return params_.mlp.apply(tape, z);
    }

    Tensor pooled(Tape& tape, const Tensor& latents) const
    {
        if (spec_.kind == HeadKind::segmentation)
            throw ConfigError("head '" + spec_.id + "' is a segmentation head, not a pooled head");
        check_latents(latents);
        const std::size_t B = latents.dim(0);
        Tensor q = num::broadcast_batch(tape, params_.query, B);  // [B, 1, D]
        Tensor z = params_.cross.apply(tape, q, latents, {}, eps_);
        return num::reshape(tape, params_.mlp.apply(tape, z), {B, spec_.output_width()});
    }

    /// Mean loss over the batch: cross-entropy for labels (per pixel for masks), MSE for regression.
    Tensor loss(Tape& tape, const Tensor& output, const std::vector<const tok::Target*>& targets) const
    {
        const std::size_t B = targets.size();
        switch (spec_.kind) {
        case HeadKind::classification: {
            std::vector<int> labels;
            for (const auto* t : targets)
                labels.push_back(t->label);
            return num::cross_entropy(tape, output, labels);
        }
        case HeadKind::regression: {
            std::vector<double> y;
            for (const auto* t : targets) {
                if (t->values.size() != spec_.outputs)
                    throw InputError("regression head '" + spec_.id + "' expects " + std::to_string(spec_.outputs) +
                                     " target values");
                y.insert(y.end(), t->values.begin(), t->values.end());
            }
            return num::mse_loss(tape, output, y);
        }
        case HeadKind::segmentation: {
            std::vector<int> labels;
            for (const auto* t : targets) {
                if (t->mask.size() != spec_.height * spec_.width)
                    throw InputError("segmentation head '" + spec_.id + "' expects a " +
                                     std::to_string(spec_.height) + "x" + std::to_string(spec_.width) + " mask");
                labels.insert(labels.end(), t->mask.begin(), t->mask.end());
            }
            Tensor flat = num::reshape(tape, output, {B * spec_.height * spec_.width, spec_.classes});
            return num::cross_entropy(tape, flat, labels);
        }
        }
        throw ConfigError("unreachable head kind");
    }

private:
    void check_latents(const Tensor& latents) const
    {
        if (latents.rank() != 3 || latents.dim(2) != params_.mlp.hidden.weight.dim(0))
            throw ShapeError("head '" + spec_.id + "': latents " + num::to_string(latents.shape()) +
                             " do not match head width");
    }

    HeadSpec spec_;
    HeadParams params_;
    double eps_ = 1e-5;
};

/// Pooled head evaluation; throws ConfigError for segmentation heads.
inline Tensor pooled_head(Tape& tape, const Tensor& latents, const Head& head)
{
    return head.pooled(tape, latents);
}

inline Tensor segmentation_head(Tape& tape, const Tensor& latents, const Head& head)
{
    return head.forward_queries(tape, latents, head.params().query_encodings);
}

/// Evaluates each head on the same latents. Head ids must be unique.
inline std::map<std::string, Tensor> multi_head_forward(Tape& tape, const Tensor& latents,
                                                        const std::vector<const Head*>& heads)
{
    if (heads.empty())
        throw ConfigError("multi_head_forward needs at least one head");
    std::set<std::string> seen;
    for (const auto* h : heads)
        if (!seen.insert(h->spec().id).second)
            throw ConfigError("duplicate head id '" + h->spec().id + "'");
    std::map<std::string, Tensor> out;
    for (const auto* h : heads)
        out.emplace(h->spec().id, h->forward(tape, latents));
    return out;
}

}  // namespace gpna::model
