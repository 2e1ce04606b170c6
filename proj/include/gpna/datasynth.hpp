#pragma once
// Synthetic datasets with a planted, recoverable signal. Every generator is a
// pure function of its SynthSpec (seed included). Pixel values are rounded to
// float before targets are computed so the stored data reproduces them exactly.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "gpna/dataset.hpp"
#include "gpna/error.hpp"
#include "gpna/random.hpp"

namespace gpna::synth {

using data::Dataset;
using data::json;
using tok::UncertainScalar;
using tok::GeoSample;
using tok::ModalitySpec;

enum class TaskKind { classification, regression, segmentation, paired_temporal };

inline std::string to_string(TaskKind k)
{
    switch (k) {
    case TaskKind::classification:
        return "classification";
    case TaskKind::regression:
        return "regression";
    case TaskKind::segmentation:
        return "segmentation";
    case TaskKind::paired_temporal:
        return "paired_temporal";
    }
    return "classification";
}

inline TaskKind parse_task_kind(const std::string& s)
{
    if (s == "classification")
        return TaskKind::classification;
    if (s == "regression")
        return TaskKind::regression;
    if (s == "segmentation")
        return TaskKind::segmentation;
    if (s == "paired_temporal")
        return TaskKind::paired_temporal;
    throw ConfigError("unknown task '" + s + "'");
}

/// Rectangle [y, y + h) x [x, x + w) in pixels.
struct Rect {
    std::size_t y = 0, x = 0, h = 0, w = 0;
};

struct SynthSpec {
    TaskKind task = TaskKind::classification;
    ModalitySpec modality;
    std::size_t n_samples = 256;
    std::uint64_t seed = 7;
    double test_fraction = 0.25;

    double pixel_noise = 1.0;       // std of i.i.d. Gaussian pixel noise
    double level_std = 1.0;         // std of per-sample band levels
    double location_extent = 1.0;   // lat, lon ~ U(0, extent)
    double location_half_width = 0.0;
    double time_half_width = 0.0;

    // classification: band-0 level = threshold + (label - 1/2) * class_gap
    double threshold = 0.0;
    double class_gap = 4.0;

    // regression: y = sum_{t,l} coefficients[t * L + l] * mean(band l at t) + N(0, target_noise^2)
    std::vector<double> coefficients;  // empty: drawn from the seed, unit L2 norm
    double target_noise = 0.5;

    // segmentation: band 0 = contrast * mask + noise
    std::size_t n_rects = 1;
    std::size_t rect_min = 10;
    std::size_t rect_max = 24;
    double contrast = 3.0;

    // paired temporal: f(frame) = sum_l band_weights[l] * mean(band l); target f(frame 2) - f(frame 1)
    std::vector<double> band_weights;  // empty: drawn from the seed, unit L2 norm

    void validate() const
    {
        modality.validate();
        if (n_samples < 2)
            throw ConfigError("synth: n_samples must be at least 2");
        if (!(test_fraction > 0.0 && test_fraction < 1.0))
            throw ConfigError("synth: test_fraction must lie in (0, 1)");
        if (!(pixel_noise >= 0.0) || !(level_std >= 0.0) || !(target_noise >= 0.0))
            throw ConfigError("synth: noise levels must be non-negative");
        if (!(location_extent >= 0.0 && location_extent <= 1.0))
            throw ConfigError("synth: location_extent must lie in [0, 1]");
        const std::size_t L = modality.n_bands(), T = modality.timesteps;
        switch (task) {
        case TaskKind::classification:
            if (L < 2)
                throw ConfigError("synth: classification needs at least two bands");
            if (!(class_gap >= 0.0))
                throw ConfigError("synth: class_gap must be non-negative");
            break;
        case TaskKind::regression:
            if (!coefficients.empty() && coefficients.size() != T * L)
                throw ConfigError("synth: regression needs timesteps * bands coefficients");
            break;
        case TaskKind::segmentation:
            if (rect_min == 0 || rect_min > rect_max || rect_max > std::min(modality.height, modality.width))
                throw ConfigError("synth: rectangle sizes must satisfy 0 < rect_min <= rect_max <= image side");
            break;
        case TaskKind::paired_temporal:
            if (T != 2)
                throw ConfigError("synth: paired_temporal needs exactly two timesteps");
            if (!band_weights.empty() && band_weights.size() != L)
                throw ConfigError("synth: paired_temporal needs one weight per band");
            break;
        }
    }

    std::size_t n_test() const
    {
        const auto k = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(n_samples)));
        return std::clamp<std::size_t>(k, 1, n_samples - 1);
    }
};

namespace detail {

inline double gauss(Rng& rng, double sd)
{
    std::normal_distribution<double> d(0.0, 1.0);
    return sd * d(rng);
}

inline double uniform(Rng& rng, double lo, double hi)
{
    std::uniform_real_distribution<double> d(lo, hi);
    return d(rng);
}

inline std::size_t uniform_int(Rng& rng, std::size_t lo, std::size_t hi)
{
    std::uniform_int_distribution<std::size_t> d(lo, hi);
    return d(rng);
}

inline double to_float(double v)
{
    return static_cast<double>(static_cast<float>(v));
}

inline std::vector<double> unit_vector(std::size_t n, std::uint64_t seed, const char* tag)
{
    Rng rng(fnv1a(tag, seed));
    std::vector<double> v(n);
    double norm = 0.0;
    for (auto& x : v) {
        x = uniform(rng, -1.0, 1.0);
        norm += x * x;
    }
    norm = std::sqrt(norm);
    for (auto& x : v)
        x /= norm;
    return v;
}

/// Mean over pixels of band l at timestep t.
inline double band_mean(const GeoSample& s, std::size_t t, std::size_t l)
{
    const auto& m = *s.spec;
    double sum = 0.0;
    for (std::size_t y = 0; y < m.height; ++y)
        for (std::size_t x = 0; x < m.width; ++x)
            sum += s.at(t, y, x, l);
    return sum / static_cast<double>(m.height * m.width);
}

inline Dataset skeleton(const SynthSpec& spec, std::shared_ptr<const ModalitySpec>& modality)
{
    spec.validate();
    ModalitySpec m = spec.modality;
    m.band_mean.clear();
    m.band_std.clear();
    modality = std::make_shared<const ModalitySpec>(m);
    Dataset ds;
    ds.task = to_string(spec.task);
    ds.modalities = {modality};
    return ds;
}

/// Id, modality, location and zeroed values.
inline GeoSample make_sample(const SynthSpec& spec, const std::shared_ptr<const ModalitySpec>& m, std::size_t index,
                             Rng& rng)
{
    GeoSample s;
    s.id = to_string(spec.task) + "-" + std::to_string(index);
    s.spec = m;
    s.lat = {uniform(rng, 0.0, 1.0) * spec.location_extent, spec.location_half_width};
    s.lon = {uniform(rng, 0.0, 1.0) * spec.location_extent, spec.location_half_width};
    s.values.assign(m->n_values(), 0.0);
    return s;
}

inline void fill_band(GeoSample& s, std::size_t t, std::size_t l, double level, double noise, Rng& rng,
                      const std::vector<int>* mask = nullptr, double contrast = 0.0)
{
    const auto& m = *s.spec;
    for (std::size_t y = 0; y < m.height; ++y)
        for (std::size_t x = 0; x < m.width; ++x) {
            double v = level + gauss(rng, noise);
            if (mask)
                v += contrast * (*mask)[y * m.width + x];
            s.values[((t * m.height + y) * m.width + x) * m.n_bands() + l] = to_float(v);
        }
}

/// Band normalization from the training split, then stored on the modality.
inline void finish(Dataset& ds, const SynthSpec& spec)
{
    const std::size_t n_train = spec.n_samples - spec.n_test();
    ds.splits.assign(spec.n_samples, data::Split::train);
    for (std::size_t i = n_train; i < spec.n_samples; ++i)
        ds.splits[i] = data::Split::test;
    auto [mean, sd] = data::band_statistics(ds.subset(data::Split::train));
    ModalitySpec m = *ds.modalities.front();
    m.band_mean = mean;
    m.band_std = sd;
    auto ptr = std::make_shared<const ModalitySpec>(m);
    ds.modalities = {ptr};
    for (auto& s : ds.samples)
        s.spec = ptr;
    ds.planted["seed"] = spec.seed;
    ds.planted["task"] = to_string(spec.task);
}

inline std::vector<UncertainScalar> uniform_times(const SynthSpec& spec, Rng& rng)
{
    const std::size_t T = spec.modality.timesteps;
    std::vector<UncertainScalar> out;
    for (std::size_t t = 0; t < T; ++t)
        out.push_back({(static_cast<double>(t) + uniform(rng, 0.0, 1.0)) / static_cast<double>(T),
                       spec.time_half_width});
    return out;
}

}  // namespace detail

/// Label is a latent fair coin; band 0 sits at threshold +- gap/2 plus pixel noise,
/// other bands are independent noise. Large gaps make the labels separable by
/// the band-0 mean, gap 0 makes them independent of the pixels.
inline Dataset gen_classification(const SynthSpec& spec)
{
    std::shared_ptr<const ModalitySpec> m;
    Dataset ds = detail::skeleton(spec, m);
    Rng rng(spec.seed);
    for (std::size_t i = 0; i < spec.n_samples; ++i) {
        GeoSample s = detail::make_sample(spec, m, i, rng);
        s.time = detail::uniform_times(spec, rng);
        const int label = detail::uniform(rng, 0.0, 1.0) < 0.5 ? 0 : 1;
        const double level = spec.threshold + (label - 0.5) * spec.class_gap;
        for (std::size_t t = 0; t < m->timesteps; ++t)
            for (std::size_t l = 0; l < m->n_bands(); ++l)
                detail::fill_band(s, t, l, l == 0 ? level : detail::gauss(rng, spec.level_std), spec.pixel_noise,
                                  rng);
        s.target.label = label;
        ds.samples.push_back(std::move(s));
    }
    ds.planted["threshold"] = spec.threshold;
    ds.planted["class_gap"] = spec.class_gap;
    detail::finish(ds, spec);
    return ds;
}

inline std::vector<double> regression_coefficients(const SynthSpec& spec)
{
    if (!spec.coefficients.empty())
        return spec.coefficients;
    return detail::unit_vector(spec.modality.timesteps * spec.modality.n_bands(), spec.seed, "coefficients");
}

/// Noise-free part of the regression target: the planted linear functional of band means.
inline double regression_signal(const GeoSample& s, const std::vector<double>& coefficients)
{
    const std::size_t L = s.spec->n_bands();
    double y = 0.0;
    for (std::size_t t = 0; t < s.spec->timesteps; ++t)
        for (std::size_t l = 0; l < L; ++l)
            y += coefficients[t * L + l] * detail::band_mean(s, t, l);
    return y;
}

inline Dataset gen_regression_timeseries(const SynthSpec& spec)
{
    std::shared_ptr<const ModalitySpec> m;
    Dataset ds = detail::skeleton(spec, m);
    const auto coef = regression_coefficients(spec);
    Rng rng(spec.seed);
    for (std::size_t i = 0; i < spec.n_samples; ++i) {
        GeoSample s = detail::make_sample(spec, m, i, rng);
        s.time = detail::uniform_times(spec, rng);
        for (std::size_t t = 0; t < m->timesteps; ++t)
            for (std::size_t l = 0; l < m->n_bands(); ++l)
                detail::fill_band(s, t, l, detail::gauss(rng, spec.level_std), spec.pixel_noise, rng);
        s.target.values = {regression_signal(s, coef) + detail::gauss(rng, spec.target_noise)};
        ds.samples.push_back(std::move(s));
    }
    ds.planted["coefficients"] = coef;
    ds.planted["target_noise"] = spec.target_noise;
    detail::finish(ds, spec);
    return ds;
}

inline std::vector<int> rasterize(const std::vector<Rect>& rects, std::size_t height, std::size_t width)
{
    std::vector<int> mask(height * width, 0);
    for (const auto& r : rects)
        for (std::size_t y = r.y; y < std::min(height, r.y + r.h); ++y)
            for (std::size_t x = r.x; x < std::min(width, r.x + r.w); ++x)
                mask[y * width + x] = 1;
    return mask;
}

inline Dataset gen_segmentation(const SynthSpec& spec)
{
    std::shared_ptr<const ModalitySpec> m;
    Dataset ds = detail::skeleton(spec, m);
    Rng rng(spec.seed);
    json all_rects = json::array();
    for (std::size_t i = 0; i < spec.n_samples; ++i) {
        GeoSample s = detail::make_sample(spec, m, i, rng);
        s.time = detail::uniform_times(spec, rng);
        std::vector<Rect> rects;
        json rj = json::array();
        for (std::size_t k = 0; k < spec.n_rects; ++k) {
            Rect r;
            r.h = detail::uniform_int(rng, spec.rect_min, spec.rect_max);
            r.w = detail::uniform_int(rng, spec.rect_min, spec.rect_max);
            r.y = detail::uniform_int(rng, 0, m->height - r.h);
            r.x = detail::uniform_int(rng, 0, m->width - r.w);
            rects.push_back(r);
            rj.push_back({r.y, r.x, r.h, r.w});
        }
        s.target.mask = rasterize(rects, m->height, m->width);
        for (std::size_t t = 0; t < m->timesteps; ++t)
            for (std::size_t l = 0; l < m->n_bands(); ++l) {
                if (l == 0)
                    detail::fill_band(s, t, l, 0.0, spec.pixel_noise, rng, &s.target.mask, spec.contrast);
                else
                    detail::fill_band(s, t, l, detail::gauss(rng, spec.level_std), spec.pixel_noise, rng);
            }
        all_rects.push_back(rj);
        ds.samples.push_back(std::move(s));
    }
    ds.planted["rects"] = all_rects;
    ds.planted["contrast"] = spec.contrast;
    detail::finish(ds, spec);
    return ds;
}

inline std::vector<double> paired_band_weights(const SynthSpec& spec)
{
    if (!spec.band_weights.empty())
        return spec.band_weights;
    return detail::unit_vector(spec.modality.n_bands(), spec.seed, "band_weights");
}

/// f(frame) = sum_l w_l * mean(band l at timestep t).
inline double frame_functional(const GeoSample& s, std::size_t t, const std::vector<double>& w)
{
    double f = 0.0;
    for (std::size_t l = 0; l < s.spec->n_bands(); ++l)
        f += w[l] * detail::band_mean(s, t, l);
    return f;
}

/// Two acquisitions, the first in [0, 1/2), the second in [1/2, 1]; target is the change f(2) - f(1).
inline Dataset gen_paired_temporal(const SynthSpec& spec)
{
    std::shared_ptr<const ModalitySpec> m;
    Dataset ds = detail::skeleton(spec, m);
    const auto w = paired_band_weights(spec);
    Rng rng(spec.seed);
    for (std::size_t i = 0; i < spec.n_samples; ++i) {
        GeoSample s = detail::make_sample(spec, m, i, rng);
        s.time = {{detail::uniform(rng, 0.0, 0.5), spec.time_half_width},
                  {detail::uniform(rng, 0.5, 1.0), spec.time_half_width}};
        for (std::size_t t = 0; t < 2; ++t)
            for (std::size_t l = 0; l < m->n_bands(); ++l)
                detail::fill_band(s, t, l, detail::gauss(rng, spec.level_std), spec.pixel_noise, rng);
        s.target.values = {frame_functional(s, 1, w) - frame_functional(s, 0, w)};
        ds.samples.push_back(std::move(s));
    }
    ds.planted["band_weights"] = w;
    detail::finish(ds, spec);
    return ds;
}

inline Dataset generate(const SynthSpec& spec)
{
    switch (spec.task) {
    case TaskKind::classification:
        return gen_classification(spec);
    case TaskKind::regression:
        return gen_regression_timeseries(spec);
    case TaskKind::segmentation:
        return gen_segmentation(spec);
    case TaskKind::paired_temporal:
        return gen_paired_temporal(spec);
    }
    throw ConfigError("unreachable task kind");
}

}  // namespace gpna::synth
