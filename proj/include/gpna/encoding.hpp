#pragma once
// Fourier positional encodings: plain sinusoids, per-component concatenation,
// interval-averaged (uncertainty-aware) variants and directional frequency vectors.
//
// Output layout is always [sin terms..., cos terms...] over the bank's frequencies.

#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "gpna/error.hpp"

namespace gpna::encoding {

enum class BankMode { axis_aligned, directional };

inline std::string to_string(BankMode m)
{
    return m == BankMode::axis_aligned ? "axis_aligned" : "directional";
}

inline BankMode parse_bank_mode(const std::string& s)
{
    if (s == "axis_aligned")
        return BankMode::axis_aligned;
    if (s == "directional")
        return BankMode::directional;
    throw ConfigError("unknown frequency bank mode '" + s + "'");
}

/// Frequencies in cycles per input unit. Axis-aligned banks hold one increasing
/// list shared by every input dimension; directional banks hold d-dimensional
/// vectors in the closed first orthant.
class FrequencyBank {
public:
    static FrequencyBank axis_aligned(std::vector<double> frequencies)
    {
        if (frequencies.empty())
            throw ConfigError("frequency bank is empty");
        for (std::size_t i = 0; i < frequencies.size(); ++i) {
            if (!(frequencies[i] > 0.0) || !std::isfinite(frequencies[i]))
                throw ConfigError("frequencies must be positive and finite");
            if (i > 0 && !(frequencies[i] > frequencies[i - 1]))
                throw ConfigError("frequencies must be strictly increasing");
        }
        FrequencyBank b;
        b.mode_ = BankMode::axis_aligned;
        b.frequencies_ = std::move(frequencies);
        return b;
    }

    static FrequencyBank directional(std::vector<std::vector<double>> vectors)
    {
        if (vectors.empty())
            throw ConfigError("frequency bank is empty");
        const std::size_t d = vectors.front().size();
        if (d == 0)
            throw ConfigError("frequency vectors must have at least one component");
        for (const auto& k : vectors) {
            if (k.size() != d)
                throw ConfigError("frequency vectors must share one dimension");
            bool positive = false;
            for (double c : k) {
                if (c < 0.0 || !std::isfinite(c))
                    throw ConfigError("frequency vectors must lie in the first quadrant");
                positive = positive || c > 0.0;
            }
            if (!positive)
                throw ConfigError("frequency vectors need at least one positive component");
        }
        FrequencyBank b;
        b.mode_ = BankMode::directional;
        b.vectors_ = std::move(vectors);
        return b;
    }

    BankMode mode() const { return mode_; }
    const std::vector<double>& frequencies() const { return frequencies_; }
    const std::vector<std::vector<double>>& vectors() const { return vectors_; }

    /// Number of frequencies (n/2).
    std::size_t count() const { return mode_ == BankMode::axis_aligned ? frequencies_.size() : vectors_.size(); }

    /// Input dimension a directional bank accepts; 0 (any) for axis-aligned banks.
    std::size_t input_dim() const { return mode_ == BankMode::directional ? vectors_.front().size() : 0; }

    /// Encoding length for a d-dimensional input.
    std::size_t width(std::size_t d) const { return mode_ == BankMode::axis_aligned ? 2 * count() * d : 2 * count(); }

private:
    BankMode mode_ = BankMode::axis_aligned;
    std::vector<double> frequencies_;
    std::vector<std::vector<double>> vectors_;
};

struct UncertainScalar {
    double value = 0.0;
    double half_width = 0.0;
};

/// sin(z)/z with the removable singularity filled in.
inline double sinc(double z)
{
    if (std::abs(z) < 1e-6)
        return 1.0 - z * z / 6.0;
    return std::sin(z) / z;
}

/// Mean of sin/cos(2πkx') over x' in [x - Δx, x + Δx] divided by sin/cos(2πkx).
inline double interval_damping(double k, double half_width)
{
    return half_width > 0.0 ? sinc(2.0 * std::numbers::pi * k * half_width) : 1.0;
}

namespace detail {

inline const FrequencyBank& require_axis_aligned(const FrequencyBank& bank)
{
    if (bank.mode() != BankMode::axis_aligned)
        throw ConfigError("operation needs an axis-aligned frequency bank");
    return bank;
}

}  // namespace detail

/// [sin(2π k_1 x), ..., sin(2π k_m x), cos(2π k_1 x), ..., cos(2π k_m x)]
inline std::vector<double> encode_scalar(double x, const FrequencyBank& bank)
{
    const auto& f = detail::require_axis_aligned(bank).frequencies();
    const std::size_t m = f.size();
    std::vector<double> out(2 * m);
    for (std::size_t i = 0; i < m; ++i) {
        const double phase = 2.0 * std::numbers::pi * (f[i] * x);  // same rounding as k·x below
        out[i] = std::sin(phase);
        out[m + i] = std::cos(phase);
    }
    return out;
}

/// Concatenation [γ(x_1), ..., γ(x_d)].
inline std::vector<double> encode_vector(std::span<const double> x, const FrequencyBank& bank)
{
    if (x.empty())
        throw InputError("encode_vector: input has dimension 0");
    std::vector<double> out;
    out.reserve(bank.width(x.size()));
    for (double xi : x) {
        auto part = encode_scalar(xi, bank);
        out.insert(out.end(), part.begin(), part.end());
    }
    return out;
}

/// Average of γ over [x - Δx, x + Δx]: each sinusoid damped by sinc(2πkΔx).
inline std::vector<double> encode_interval(UncertainScalar s, const FrequencyBank& bank)
{
    if (s.half_width < 0.0)
        throw InputError("encode_interval: negative half width");
    const auto& f = detail::require_axis_aligned(bank).frequencies();
    const std::size_t m = f.size();
    std::vector<double> out(2 * m);
    for (std::size_t i = 0; i < m; ++i) {
        const double phase = 2.0 * std::numbers::pi * (f[i] * s.value);
        const double damp = interval_damping(f[i], s.half_width);
        out[i] = std::sin(phase) * damp;
        out[m + i] = std::cos(phase) * damp;
    }
    return out;
}

/// [sin(2π k_1·x), ..., sin(2π k_m·x), cos(2π k_1·x), ..., cos(2π k_m·x)]
inline std::vector<double> encode_directional(std::span<const double> x, const FrequencyBank& bank)
{
    if (bank.mode() != BankMode::directional)
        throw ConfigError("encode_directional needs a directional frequency bank");
    if (x.size() != bank.input_dim())
        throw InputError("encode_directional: input dimension " + std::to_string(x.size()) +
                         " does not match bank dimension " + std::to_string(bank.input_dim()));
    const auto& ks = bank.vectors();
    const std::size_t m = ks.size();
    std::vector<double> out(2 * m);
    for (std::size_t i = 0; i < m; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < x.size(); ++j)
            dot += ks[i][j] * x[j];
        const double phase = 2.0 * std::numbers::pi * dot;
        out[i] = std::sin(phase);
        out[m + i] = std::cos(phase);
    }
    return out;
}

/// Directional encoding averaged over the box Π_j [x_j - Δx_j, x_j + Δx_j].
/// The box average of sin/cos(2π k·x) factorizes into Π_j sinc(2π k_j Δx_j);
/// with an axis-aligned vector this is exactly encode_interval on one component.
inline std::vector<double> encode_directional_interval(std::span<const UncertainScalar> x, const FrequencyBank& bank)
{
    if (bank.mode() != BankMode::directional)
        throw ConfigError("encode_directional_interval needs a directional frequency bank");
    if (x.size() != bank.input_dim())
        throw InputError("encode_directional_interval: input dimension " + std::to_string(x.size()) +
                         " does not match bank dimension " + std::to_string(bank.input_dim()));
    const auto& ks = bank.vectors();
    const std::size_t m = ks.size();
    std::vector<double> out(2 * m);
    for (std::size_t i = 0; i < m; ++i) {
        double dot = 0.0, damp = 1.0;
        for (std::size_t j = 0; j < x.size(); ++j) {
            if (x[j].half_width < 0.0)
                throw InputError("encode_directional_interval: negative half width");
            dot += ks[i][j] * x[j].value;
            damp *= interval_damping(ks[i][j], x[j].half_width);
        }
        const double phase = 2.0 * std::numbers::pi * dot;
        out[i] = std::sin(phase) * damp;
        out[m + i] = std::cos(phase) * damp;
    }
    return out;
}

/// Position in encode_vector's output of each component of encode_directional
/// evaluated with the axis-aligned bank from axis_aligned_vectors(freqs, d).
///
/// Directional layout: [sin(f_1 e_1).. sin(f_m e_1), sin(f_1 e_2).., ..., cos(...)],
/// i.e. sines for (dim j, freq i) at j*m + i, cosines at d*m + j*m + i.
/// Concatenated layout: dim j occupies [2mj, 2m(j+1)) with sines first.
inline std::vector<std::size_t> directional_to_concat_permutation(std::size_t m, std::size_t d)
{
    std::vector<std::size_t> perm(2 * m * d);
    for (std::size_t j = 0; j < d; ++j)
        for (std::size_t i = 0; i < m; ++i) {
            perm[j * m + i] = 2 * m * j + i;
            perm[d * m + j * m + i] = 2 * m * j + m + i;
        }
    return perm;
}

/// Axis-aligned frequency vectors f_i e_j ordered by dimension, then frequency.
inline std::vector<std::vector<double>> axis_aligned_vectors(const std::vector<double>& freqs, std::size_t d)
{
    std::vector<std::vector<double>> out;
    for (std::size_t j = 0; j < d; ++j)
        for (double f : freqs) {
            std::vector<double> k(d, 0.0);
            k[j] = f;
            out.push_back(std::move(k));
        }
    return out;
}

struct BankConfig {
    BankMode mode = BankMode::axis_aligned;
    std::size_t n_freqs = 8;
    double f_min = 0.5;
    double f_max = 16.0;
    std::size_t dim = 1;
    std::size_t n_angles = 4;  // directional, dim == 2 only
};

/// Geometric progression f_min..f_max (inclusive). Directional 2-D banks cross
/// those magnitudes with n_angles directions evenly spaced over [0, π/2]; other
/// dimensions fall back to axis-aligned vectors.
inline FrequencyBank make_frequency_bank(const BankConfig& cfg)
{
    if (cfg.n_freqs == 0)
        throw ConfigError("frequency bank needs at least one frequency");
    if (!(cfg.f_min > 0.0) || !(cfg.f_max > 0.0) || !(cfg.f_min < cfg.f_max))
        throw ConfigError("frequency bank needs 0 < f_min < f_max");
    if (cfg.dim == 0)
        throw ConfigError("frequency bank dimension must be positive");
    std::vector<double> mags(cfg.n_freqs);
    if (cfg.n_freqs == 1) {
        mags[0] = cfg.f_min;
    } else {
        const double ratio = std::log(cfg.f_max / cfg.f_min) / static_cast<double>(cfg.n_freqs - 1);
        for (std::size_t i = 0; i < cfg.n_freqs; ++i)
            mags[i] = cfg.f_min * std::exp(ratio * static_cast<double>(i));
        mags.back() = cfg.f_max;
    }
    if (cfg.mode == BankMode::axis_aligned)
        return FrequencyBank::axis_aligned(std::move(mags));
    if (cfg.dim != 2)
        return FrequencyBank::directional(axis_aligned_vectors(mags, cfg.dim));
    if (cfg.n_angles == 0)
        throw ConfigError("directional bank needs at least one angle");
    std::vector<std::vector<double>> vecs;
    for (double mag : mags)
        for (std::size_t a = 0; a < cfg.n_angles; ++a) {
            const double theta = cfg.n_angles == 1 ? 0.0
                                                   : 0.5 * std::numbers::pi * static_cast<double>(a) /
                                                         static_cast<double>(cfg.n_angles - 1);
            // cos(π/2) is 6e-17, not 0; clamp so vectors stay exactly in the closed quadrant.
            double cx = mag * std::cos(theta), cy = mag * std::sin(theta);
            if (a + 1 == cfg.n_angles && cfg.n_angles > 1)
                cx = 0.0;
            vecs.push_back({cx, cy});
        }
    return FrequencyBank::directional(std::move(vecs));
}

}  // namespace gpna::encoding
