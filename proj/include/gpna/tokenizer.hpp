#pragma once
// Turns T x H x W x L geospatial tensors into token matrices:
// per-band conv downsampling, additive (or concatenated) Fourier position,
// time and spectral encodings, raster-order flattening.

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <tuple>
#include <vector>

#include "gpna/encoding.hpp"
#include "gpna/error.hpp"
#include "gpna/numerics/ops.hpp"
#include "gpna/numerics/params.hpp"
#include "gpna/random.hpp"

namespace gpna::tok {

using encoding::UncertainScalar;
using num::Tape;
using num::Tensor;

enum class BandKind { optical, sar_polarization, derived };

inline std::string to_string(BandKind k)
{
    switch (k) {
    case BandKind::optical:
        return "optical";
    case BandKind::sar_polarization:
        return "sar_polarization";
    case BandKind::derived:
        return "derived";
    }
    return "derived";
}

inline BandKind parse_band_kind(const std::string& s)
{
    if (s == "optical")
        return BandKind::optical;
    if (s == "sar_polarization")
        return BandKind::sar_polarization;
    if (s == "derived")
        return BandKind::derived;
    throw ConfigError("unknown band kind '" + s + "'");
}

struct BandDescriptor {
    BandKind kind = BandKind::optical;
    std::string label;  // e.g. "B04-665nm" or "VV"
    int radiometric_bits = 16;

    bool operator==(const BandDescriptor&) const = default;
};

struct ModalitySpec {
    std::string modality_id;
    std::vector<BandDescriptor> bands;
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t timesteps = 1;
    // Per-band normalization statistics; empty means identity.
    std::vector<double> band_mean;
    std::vector<double> band_std;

    std::size_t n_bands() const { return bands.size(); }
    std::size_t n_values() const { return timesteps * height * width * bands.size(); }

    void validate() const
    {
        if (bands.empty() || timesteps == 0 || height == 0 || width == 0)
            throw ConfigError("modality '" + modality_id + "' needs at least one band, timestep and pixel");
        for (std::size_t i = 0; i < bands.size(); ++i) {
            if (bands[i].label.empty())
                throw ConfigError("modality '" + modality_id + "' has a band without a label");
            if (bands[i].radiometric_bits <= 0)
                throw ConfigError("band '" + bands[i].label + "' needs positive radiometric_bits");
            for (std::size_t j = 0; j < i; ++j)
                if (bands[i].label == bands[j].label)
                    throw ConfigError("band label '" + bands[i].label + "' repeated in modality '" + modality_id +
                                      "'");
        }
        if ((!band_mean.empty() && band_mean.size() != bands.size()) ||
            (!band_std.empty() && band_std.size() != bands.size()))
            throw ConfigError("normalization statistics of modality '" + modality_id + "' do not match band count");
        for (double s : band_std)
            if (!(s > 0.0))
                throw ConfigError("normalization std must be positive");
    }

    bool operator==(const ModalitySpec&) const = default;
};

/// Task payload; which fields are used depends on the head.
struct Target {
    int label = -1;
    std::vector<double> values;
    std::vector<int> mask;  // H x W class indices, row-major
};

struct GeoSample {
    std::string id;
    std::shared_ptr<const ModalitySpec> spec;
    std::vector<double> values;  // T x H x W x L, row-major (band fastest)
    UncertainScalar lat;         // normalized to [0, 1]
    UncertainScalar lon;
    std::vector<UncertainScalar> time;  // one per timestep, normalized
    Target target;

    double at(std::size_t t, std::size_t y, std::size_t x, std::size_t l) const
    {
        return values[((t * spec->height + y) * spec->width + x) * spec->n_bands() + l];
    }

    void validate() const
    {
        if (!spec)
            throw InputError("sample '" + id + "' has no modality");
        if (values.size() != spec->n_values())
            throw InputError("sample '" + id + "' holds " + std::to_string(values.size()) + " values, modality '" +
                             spec->modality_id + "' needs " + std::to_string(spec->n_values()));
        if (time.size() != spec->timesteps)
            throw InputError("sample '" + id + "' needs one time stamp per timestep");
    }
};

struct Provenance {
    std::size_t t = 0, h = 0, w = 0, l = 0;
    bool padding = false;

    auto key() const { return std::tuple(t, h, w, l); }
    bool operator==(const Provenance&) const = default;
};

struct TokenMatrix {
    Tensor tokens;  // [n_tokens, width]
    std::vector<Provenance> provenance;
    std::vector<std::uint8_t> valid_mask;

    std::size_t n_tokens() const { return tokens.dim(0); }
    std::size_t width() const { return tokens.dim(1); }
    std::size_t n_valid() const
    {
        std::size_t n = 0;
        for (auto m : valid_mask)
            n += m;
        return n;
    }
};

inline std::size_t downsampled(std::size_t extent)
{
    return (extent + 7) / 8;
}

/// Tokens produced for a modality: T * ceil(H/8) * ceil(W/8) * L.
inline std::size_t token_count(const ModalitySpec& spec)
{
    return spec.timesteps * downsampled(spec.height) * downsampled(spec.width) * spec.n_bands();
}

/// Three 3x3 stride-2 convolutions (padding 1) with GELU between them.
/// Weights are shared by every modality that carries the same band label.
struct ConvStack {
    std::string band_key;
    std::array<Tensor, 3> weight;
    std::array<Tensor, 3> bias;

    std::size_t out_channels() const { return weight[2].dim(0); }

    /// frames [images, 1, H, W] -> [images, C, ceil(H/8), ceil(W/8)]
    Tensor forward(Tape& tape, const Tensor& frames) const
    {
        if (frames.rank() != 4 || frames.dim(2) < 8 || frames.dim(3) < 8)
            throw InputError("conv stack '" + band_key + "' needs frames of at least 8x8, got " +
                             num::to_string(frames.shape()));
        Tensor x = frames;
        for (std::size_t i = 0; i < 3; ++i) {
            x = num::conv2d(tape, x, weight[i], bias[i], 2, 1);
            if (i < 2)
                x = num::gelu(tape, x);
        }
        return x;
    }
};

/// Downsample one H x W frame of one band into an [H', W', C] feature map.
inline Tensor conv_downsample_band(Tape& tape, std::span<const double> frame, std::size_t height, std::size_t width,
                                   const ConvStack& stack)
{
    if (height < 8 || width < 8)
        throw InputError("frame of " + std::to_string(height) + "x" + std::to_string(width) +
                         " is too small for three stride-2 convolutions (need >= 8x8)");
    if (frame.size() != height * width)
        throw InputError("frame size does not match its extent");
    Tensor x = Tensor::constant({1, 1, height, width}, std::vector<double>(frame.begin(), frame.end()));
    Tensor y = stack.forward(tape, x);
    y = num::reshape(tape, y, {y.dim(1), y.dim(2), y.dim(3)});
    return num::permute(tape, y, {1, 2, 0});
}

enum class PositionMode { add, concat };

inline PositionMode parse_position_mode(const std::string& s)
{
    if (s == "add")
        return PositionMode::add;
    if (s == "concat")
        return PositionMode::concat;
    throw ConfigError("unknown position_mode '" + s + "'");
}

struct TokenizerConfig {
    std::array<std::size_t, 3> channels{16, 32, 64};
    PositionMode position_mode = PositionMode::add;
    encoding::BankConfig spatial{encoding::BankMode::directional, 6, 0.5, 8.0, 2, 4};
    encoding::BankConfig temporal{encoding::BankMode::axis_aligned, 4, 0.5, 4.0, 1, 4};
    encoding::BankConfig spectral{encoding::BankMode::axis_aligned, 3, 0.25, 1.0, 1, 4};
    std::uint64_t seed = 17;
};

/// Per-token positional encodings, before projection.
struct PositionalEncodings {
    std::vector<std::vector<double>> spatial;   // per (h', w'), row-major
    std::vector<std::vector<double>> temporal;  // per t
    std::vector<std::vector<double>> spectral;  // per l
};

class TokenizerRegistry;

/// Bound tokenizer for one modality.
struct Tokenizer {
    ModalitySpec spec;
    std::vector<std::shared_ptr<const ConvStack>> stacks;  // one per band, in band order
};

class TokenizerRegistry {
public:
    TokenizerRegistry(num::ParamStore& store, TokenizerConfig config)
        : store_(&store), config_(std::move(config)),
          spatial_bank_(encoding::make_frequency_bank(config_.spatial)),
          temporal_bank_(encoding::make_frequency_bank(config_.temporal)),
          spectral_bank_(encoding::make_frequency_bank(config_.spectral))
    {
        if (spatial_bank_.mode() == encoding::BankMode::directional && spatial_bank_.input_dim() != 2)
            throw ConfigError("spatial bank must be two-dimensional");
        for (auto c : config_.channels)
            if (c == 0)
                throw ConfigError("conv channel widths must be positive");
        const std::size_t c = config_.channels[2];
        Rng rng(config_.seed);
        auto fixed_projection = [&](const std::string& name, std::size_t in) {
            return store_->add(name, {in, c}, normal_values(rng, in * c, 1.0 / std::sqrt(static_cast<double>(in))),
                               false);
        };
        spatial_proj_ = fixed_projection("tokenizer.position.spatial", spatial_width());
        temporal_proj_ = fixed_projection("tokenizer.position.temporal", temporal_bank_.width(1));
        spectral_proj_ = fixed_projection("tokenizer.position.spectral", spectral_bank_.width(1));
    }

    const TokenizerConfig& config() const { return config_; }
    const encoding::FrequencyBank& spatial_bank() const { return spatial_bank_; }
    const encoding::FrequencyBank& temporal_bank() const { return temporal_bank_; }
    const encoding::FrequencyBank& spectral_bank() const { return spectral_bank_; }

    std::size_t spatial_width() const { return spatial_bank_.width(2); }
    std::size_t position_width() const
    {
        return spatial_width() + temporal_bank_.width(1) + spectral_bank_.width(1);
    }

    /// Token width produced by every tokenizer of this registry.
    std::size_t token_width() const
    {
        return config_.channels[2] + (config_.position_mode == PositionMode::concat ? position_width() : 0);
    }

    /// Binds a modality, reusing the conv stack of every band label seen before.
    Tokenizer register_tokenizer(const ModalitySpec& spec)
    {
        spec.validate();
        std::lock_guard lock(mutex_);
        Tokenizer handle{spec, {}};
        for (const auto& band : spec.bands) {
            auto it = stacks_.find(band.label);
            if (it == stacks_.end())
                it = stacks_.emplace(band.label, create_stack(band.label)).first;
            handle.stacks.push_back(it->second);
        }
        return handle;
    }

    std::shared_ptr<const ConvStack> stack(const std::string& band_label) const
    {
        std::lock_guard lock(mutex_);
        auto it = stacks_.find(band_label);
        return it == stacks_.end() ? nullptr : it->second;
    }

    std::size_t n_stacks() const
    {
        std::lock_guard lock(mutex_);
        return stacks_.size();
    }

    PositionalEncodings positional_encodings(const GeoSample& sample) const
    {
        const auto& spec = *sample.spec;
        const std::size_t hp = downsampled(spec.height), wp = downsampled(spec.width), nb = spec.n_bands();
        PositionalEncodings enc;
        for (std::size_t h = 0; h < hp; ++h)
            for (std::size_t w = 0; w < wp; ++w) {
                const std::array<UncertainScalar, 2> pos{
                    UncertainScalar{sample.lat.value + (static_cast<double>(h) + 0.5) / static_cast<double>(hp),
                                    sample.lat.half_width},
                    UncertainScalar{sample.lon.value + (static_cast<double>(w) + 0.5) / static_cast<double>(wp),
                                    sample.lon.half_width}};
                if (spatial_bank_.mode() == encoding::BankMode::directional) {
                    enc.spatial.push_back(encoding::encode_directional_interval(pos, spatial_bank_));
                } else {
                    auto a = encoding::encode_interval(pos[0], spatial_bank_);
                    auto b = encoding::encode_interval(pos[1], spatial_bank_);
                    a.insert(a.end(), b.begin(), b.end());
                    enc.spatial.push_back(std::move(a));
                }
            }
        for (const auto& t : sample.time)
            enc.temporal.push_back(encoding::encode_interval(t, temporal_bank_));
        for (std::size_t l = 0; l < nb; ++l) {
            const double pos = nb > 1 ? static_cast<double>(l) / static_cast<double>(nb - 1) : 0.0;
            enc.spectral.push_back(encoding::encode_scalar(pos, spectral_bank_));
        }
        return enc;
    }

    /// Projections of each encoding to the feature width, laid out per token
    /// in raster order. Summing the three gives the additive position term.
    struct ProjectedPositions {
        std::vector<double> spatial, temporal, spectral;  // each [n_tokens * C]
    };

    ProjectedPositions projected_positions(const GeoSample& sample) const
    {
        const auto& spec = *sample.spec;
        const auto enc = positional_encodings(sample);
        const std::size_t c = config_.channels[2];
        auto project = [c](const std::vector<double>& e, const Tensor& p) {
            std::vector<double> out(c, 0.0);
            for (std::size_t i = 0; i < e.size(); ++i)
                for (std::size_t j = 0; j < c; ++j)
                    out[j] += e[i] * p.values()[i * c + j];
            return out;
        };
        std::vector<std::vector<double>> ps, pt, pl;
        for (const auto& e : enc.spatial)
            ps.push_back(project(e, spatial_proj_));
        for (const auto& e : enc.temporal)
            pt.push_back(project(e, temporal_proj_));
        for (const auto& e : enc.spectral)
            pl.push_back(project(e, spectral_proj_));
        ProjectedPositions out;
        const std::size_t hw = downsampled(spec.height) * downsampled(spec.width);
        for (std::size_t t = 0; t < spec.timesteps; ++t)
            for (std::size_t cell = 0; cell < hw; ++cell)
                for (std::size_t l = 0; l < spec.n_bands(); ++l) {
                    out.spatial.insert(out.spatial.end(), ps[cell].begin(), ps[cell].end());
                    out.temporal.insert(out.temporal.end(), pt[t].begin(), pt[t].end());
                    out.spectral.insert(out.spectral.end(), pl[l].begin(), pl[l].end());
                }
        return out;
    }

    /// Token matrix of one sample: rows in raster order (t, h', w', l).
    TokenMatrix tokenize(Tape& tape, const GeoSample& sample, const Tokenizer& handle) const
    {
        sample.validate();
        const auto& spec = handle.spec;
        if (sample.spec->modality_id != spec.modality_id || sample.spec->height != spec.height ||
            sample.spec->width != spec.width || sample.spec->timesteps != spec.timesteps ||
            sample.spec->bands != spec.bands)
            throw InputError("sample '" + sample.id + "' does not match tokenizer for modality '" +
                             spec.modality_id + "'");
        const std::size_t T = spec.timesteps, H = spec.height, W = spec.width, L = spec.n_bands();
        if (H < 8 || W < 8)
            throw InputError("modality '" + spec.modality_id + "' images are smaller than 8x8");
        const std::size_t hp = downsampled(H), wp = downsampled(W), cells = hp * wp;
        const std::size_t c = config_.channels[2];

        std::vector<Tensor> per_band;
        per_band.reserve(L);
        for (std::size_t l = 0; l < L; ++l) {
            const double mu = spec.band_mean.empty() ? 0.0 : spec.band_mean[l];
            const double sd = spec.band_std.empty() ? 1.0 : spec.band_std[l];
            std::vector<double> frames(T * H * W);
            for (std::size_t t = 0; t < T; ++t)
                for (std::size_t y = 0; y < H; ++y)
                    for (std::size_t x = 0; x < W; ++x)
                        frames[(t * H + y) * W + x] = (sample.at(t, y, x, l) - mu) / sd;
            Tensor f = handle.stacks[l]->forward(tape, Tensor::constant({T, 1, H, W}, std::move(frames)));
            f = num::permute(tape, f, {0, 2, 3, 1});  // [T, H', W', C]
            per_band.push_back(num::reshape(tape, f, {T * cells, c}));
        }
        Tensor stacked = L == 1 ? per_band.front() : num::concat(tape, per_band, 0);

        const std::size_t n = T * cells * L;
        std::vector<std::size_t> rows;
        TokenMatrix tm;
        rows.reserve(n);
        tm.provenance.reserve(n);
        for (std::size_t t = 0; t < T; ++t)
            for (std::size_t h = 0; h < hp; ++h)
                for (std::size_t w = 0; w < wp; ++w)
                    for (std::size_t l = 0; l < L; ++l) {
                        rows.push_back(l * T * cells + t * cells + h * wp + w);
                        tm.provenance.push_back({t, h, w, l, false});
                    }
        Tensor features = num::gather_rows(tape, stacked, std::move(rows));

        if (config_.position_mode == PositionMode::add) {
            auto pos = projected_positions(sample);
            std::vector<double> total(n * c);
            for (std::size_t i = 0; i < total.size(); ++i)
                total[i] = pos.spatial[i] + pos.temporal[i] + pos.spectral[i];
            tm.tokens = num::add(tape, features, Tensor::constant({n, c}, std::move(total)));
        } else {
            const auto enc = positional_encodings(sample);
            const std::size_t pw = position_width();
            std::vector<double> raw;
            raw.reserve(n * pw);
            for (const auto& p : tm.provenance) {
                const auto& s = enc.spatial[p.h * wp + p.w];
                raw.insert(raw.end(), s.begin(), s.end());
                raw.insert(raw.end(), enc.temporal[p.t].begin(), enc.temporal[p.t].end());
                raw.insert(raw.end(), enc.spectral[p.l].begin(), enc.spectral[p.l].end());
            }
            tm.tokens = num::concat(tape, {features, Tensor::constant({n, pw}, std::move(raw))}, 1);
        }
        tm.valid_mask.assign(n, 1);
        return tm;
    }

private:
    std::shared_ptr<const ConvStack> create_stack(const std::string& label)
    {
        auto stack = std::make_shared<ConvStack>();
        stack->band_key = label;
        Rng rng(fnv1a(label, config_.seed));
        std::size_t in = 1;
        for (std::size_t i = 0; i < 3; ++i) {
            const std::size_t out = config_.channels[i];
            const std::string prefix = "tokenizer.band." + label + ".conv" + std::to_string(i + 1);
            stack->weight[i] = store_->add(prefix + ".weight", {out, in, 3, 3},
                                           normal_values(rng, out * in * 9, 1.0 / std::sqrt(9.0 * in)));
            stack->bias[i] = store_->add(prefix + ".bias", {out}, std::vector<double>(out, 0.0));
            in = out;
        }
        return stack;
    }

    num::ParamStore* store_;
    TokenizerConfig config_;
    encoding::FrequencyBank spatial_bank_, temporal_bank_, spectral_bank_;
    Tensor spatial_proj_, temporal_proj_, spectral_proj_;
    mutable std::mutex mutex_;
    std::map<std::string, std::shared_ptr<const ConvStack>> stacks_;
};

/// Appends zero rows up to target_len; padding rows are invalid and marked in provenance.
inline TokenMatrix pad_tokens(Tape& tape, const TokenMatrix& tm, std::size_t target_len)
{
    const std::size_t n = tm.n_tokens();
    if (target_len < n)
        throw InputError("pad_tokens: target length " + std::to_string(target_len) + " is below token count " +
                         std::to_string(n));
    if (target_len == n)
        return tm;
    TokenMatrix out;
    out.tokens = num::concat(tape, {tm.tokens, Tensor::zeros({target_len - n, tm.width()})}, 0);
    out.provenance = tm.provenance;
    out.provenance.resize(target_len, Provenance{0, 0, 0, 0, true});
    out.valid_mask = tm.valid_mask;
    out.valid_mask.resize(target_len, 0);
    return out;
}

}  // namespace gpna::tok
