#pragma once
// Full model: tokenizer registry, shared backbone and task heads over one ParamStore.

#include <map>
#include <memory>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "gpna/backbone.hpp"
#include "gpna/heads.hpp"
#include "gpna/tokenizer.hpp"

namespace gpna::model {

struct ModelConfig {
    tok::TokenizerConfig tokenizer;
    BackboneConfig backbone;
    std::vector<HeadSpec> heads;
    // Segmentation query bank; unset means reuse the tokenizer's spatial bank.
    std::optional<encoding::BankConfig> segmentation_bank;
    std::uint64_t seed = 1;
};

struct ForwardResult {
    Tensor latents;
    std::map<std::string, Tensor> outputs;
};

/// Owns every parameter. Parameters are registered in a fixed order (tokenizer
/// projections, backbone, conv stacks in modality/band order, heads) so the
/// checkpoint layout depends only on the config and the modality list.
class Model {
public:
    Model(ModelConfig config, const std::vector<tok::ModalitySpec>& modalities)
        : config_(std::move(config)), registry_(params_, config_.tokenizer),
          backbone_(params_, config_.backbone, registry_.token_width(), config_.seed)
    {
        for (const auto& m : modalities)
            add_modality(m);
        const auto query_bank = config_.segmentation_bank ? encoding::make_frequency_bank(*config_.segmentation_bank)
                                                          : registry_.spatial_bank();
        std::set<std::string> ids;
        for (const auto& spec : config_.heads) {
            if (!ids.insert(spec.id).second)
                throw ConfigError("duplicate head id '" + spec.id + "'");
            heads_.push_back(std::make_unique<Head>(params_, spec, config_.backbone, query_bank, config_.seed));
        }
        if (heads_.empty())
            throw ConfigError("model needs at least one head");
    }

    Model(const Model&) = delete;
    Model& operator=(const Model&) = delete;

    const ModelConfig& config() const { return config_; }
    num::ParamStore& params() { return params_; }
    const num::ParamStore& params() const { return params_; }
    tok::TokenizerRegistry& registry() { return registry_; }
    const tok::TokenizerRegistry& registry() const { return registry_; }
    const Backbone& backbone() const { return backbone_; }

    std::vector<const Head*> heads() const
    {
        std::vector<const Head*> out;
        for (const auto& h : heads_)
            out.push_back(h.get());
        return out;
    }

    const Head& head(const std::string& id) const
    {
        for (const auto& h : heads_)
            if (h->spec().id == id)
                return *h;
        throw ConfigError("unknown head '" + id + "'");
    }

    const tok::Tokenizer& add_modality(const tok::ModalitySpec& spec)
    {
        auto it = tokenizers_.find(spec.modality_id);
        if (it != tokenizers_.end()) {
            if (!(it->second.spec == spec))
                throw ConfigError("modality '" + spec.modality_id + "' registered twice with different specs");
            return it->second;
        }
        return tokenizers_.emplace(spec.modality_id, registry_.register_tokenizer(spec)).first->second;
    }

    const tok::Tokenizer& tokenizer(const std::string& modality_id) const
    {
        auto it = tokenizers_.find(modality_id);
        if (it == tokenizers_.end())
            throw InputError("no tokenizer registered for modality '" + modality_id + "'");
        return it->second;
    }

    tok::TokenMatrix tokenize(Tape& tape, const tok::GeoSample& sample) const
    {
        sample.validate();
        return registry_.tokenize(tape, sample, tokenizer(sample.spec->modality_id));
    }

    /// Tokenizes the batch, pads to max(pad_to, longest) and runs backbone plus every head.
    ForwardResult forward(Tape& tape, std::span<const tok::GeoSample* const> batch, std::size_t pad_to = 0) const
    {
        std::vector<tok::TokenMatrix> tokens;
        tokens.reserve(batch.size());
        for (const auto* s : batch)
            tokens.push_back(tokenize(tape, *s));
        ForwardResult r;
        r.latents = backbone_.encode(tape, tokens, pad_to);
        r.outputs = multi_head_forward(tape, r.latents, heads());
        return r;
    }

    /// Sum over heads of each head's batch-mean loss.
    Tensor loss(Tape& tape, const ForwardResult& fr, std::span<const tok::GeoSample* const> batch) const
    {
        std::vector<const tok::Target*> targets;
        for (const auto* s : batch)
            targets.push_back(&s->target);
        Tensor total;
        for (const auto& h : heads_) {
            Tensor l = h->loss(tape, fr.outputs.at(h->spec().id), targets);
            total = total.defined() ? num::add(tape, total, l) : l;
        }
        return total;
    }

    /// Per-head losses plus their sum (last element).
    std::vector<Tensor> head_losses(Tape& tape, const ForwardResult& fr,
                                    std::span<const tok::GeoSample* const> batch) const
    {
        std::vector<const tok::Target*> targets;
        for (const auto* s : batch)
            targets.push_back(&s->target);
        std::vector<Tensor> out;
        for (const auto& h : heads_)
            out.push_back(h->loss(tape, fr.outputs.at(h->spec().id), targets));
        Tensor total = out.front();
        for (std::size_t i = 1; i < out.size(); ++i)
            total = num::add(tape, total, out[i]);
        out.push_back(total);
        return out;
    }

private:
    ModelConfig config_;
    num::ParamStore params_;
    tok::TokenizerRegistry registry_;
    Backbone backbone_;
    std::vector<std::unique_ptr<Head>> heads_;
    std::map<std::string, tok::Tokenizer> tokenizers_;
};

}  // namespace gpna::model
