#pragma once
// Small builders for modalities and samples shared by the test files.

#include <memory>
#include <random>
#include <string>
#include <vector>

#include "gpna/tokenizer.hpp"

namespace gpna::testing_support {

inline std::shared_ptr<const tok::ModalitySpec> make_spec(const std::string& id, const std::vector<std::string>& labels,
                                                          std::size_t height, std::size_t width,
                                                          std::size_t timesteps = 1)
{
    auto spec = std::make_shared<tok::ModalitySpec>();
    spec->modality_id = id;
    for (const auto& l : labels)
        spec->bands.push_back({tok::BandKind::optical, l, 16});
    spec->height = height;
    spec->width = width;
    spec->timesteps = timesteps;
    return spec;
}

inline tok::GeoSample random_sample(const std::shared_ptr<const tok::ModalitySpec>& spec, std::mt19937_64& rng,
                                    const std::string& id = "s")
{
    std::normal_distribution<double> n(0.0, 1.0);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    tok::GeoSample s;
    s.id = id;
    s.spec = spec;
    s.values.resize(spec->n_values());
    for (auto& v : s.values)
        v = n(rng);
    s.lat = {u(rng), 0.01 * u(rng)};
    s.lon = {u(rng), 0.01 * u(rng)};
    for (std::size_t t = 0; t < spec->timesteps; ++t)
        s.time.push_back({u(rng), 0.02 * u(rng)});
    return s;
}

/// Tokenizer widths small enough for fast tests.
inline tok::TokenizerConfig small_tokenizer_config()
{
    tok::TokenizerConfig c;
    c.channels = {4, 6, 8};
    return c;
}

}  // namespace gpna::testing_support
