#pragma once
// In-memory dataset plus the on-disk directory format:
//   manifest.json           modalities, normalization, bounding box, time span, sample list
//   samples/<index>.bin     u32 LE T, H, W, L then T*H*W*L f32 LE values (band fastest)
// Coordinates in the manifest are raw; loading maps them into [0, 1] through
// the bounding box and time span.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gpna/error.hpp"
#include "gpna/tokenizer.hpp"

namespace gpna::data {

namespace fs = std::filesystem;
using nlohmann::json;
using tok::GeoSample;
using tok::ModalitySpec;

struct BoundingBox {
    double lat_min = 0.0, lat_max = 1.0;
    double lon_min = 0.0, lon_max = 1.0;
};

struct TimeSpan {
    double start = 0.0, end = 1.0;
};

enum class Split { train, test };

inline std::string to_string(Split s)
{
    return s == Split::train ? "train" : "test";
}

inline Split parse_split(const std::string& s)
{
    if (s == "train")
        return Split::train;
    if (s == "test")
        return Split::test;
    throw DataError("unknown split '" + s + "'");
}

struct Dataset {
    std::string task;
    std::vector<std::shared_ptr<const ModalitySpec>> modalities;
    std::vector<GeoSample> samples;
    std::vector<Split> splits;  // parallel to samples
    BoundingBox bbox;
    TimeSpan time_span;
    json planted = json::object();  // generator parameters worth keeping (coefficients, rectangles)

    std::vector<const GeoSample*> subset(Split s) const
    {
        std::vector<const GeoSample*> out;
        for (std::size_t i = 0; i < samples.size(); ++i)
            if (splits[i] == s)
                out.push_back(&samples[i]);
        return out;
    }

    std::vector<const GeoSample*> all() const
    {
        std::vector<const GeoSample*> out;
        for (const auto& s : samples)
            out.push_back(&s);
        return out;
    }

    std::vector<ModalitySpec> modality_specs() const
    {
        std::vector<ModalitySpec> out;
        for (const auto& m : modalities)
            out.push_back(*m);
        return out;
    }
};

/// Per-band mean and population std over the given samples (T, H, W pooled).
/// Bands with zero spread get std 1.
inline std::pair<std::vector<double>, std::vector<double>> band_statistics(const std::vector<const GeoSample*>& samples)
{
    if (samples.empty())
        throw DataError("band_statistics: no samples");
    const std::size_t L = samples.front()->spec->n_bands();
    std::vector<double> sum(L, 0.0), sq(L, 0.0);
    std::size_t n = 0;
    for (const auto* s : samples) {
        if (s->spec->n_bands() != L)
            throw DataError("band_statistics: samples disagree on band count");
        for (std::size_t i = 0; i < s->values.size(); ++i)
            sum[i % L] += s->values[i];
        n += s->values.size() / L;
    }
    std::vector<double> mean(L), sd(L);
    for (std::size_t l = 0; l < L; ++l)
        mean[l] = sum[l] / static_cast<double>(n);
    for (const auto* s : samples)
        for (std::size_t i = 0; i < s->values.size(); ++i) {
            const double d = s->values[i] - mean[i % L];
            sq[i % L] += d * d;
        }
    for (std::size_t l = 0; l < L; ++l) {
        sd[l] = std::sqrt(sq[l] / static_cast<double>(n));
        if (!(sd[l] > 0.0))
            sd[l] = 1.0;
    }
    return {mean, sd};
}

// ---- JSON mapping ---------------------------------------------------------

inline json modality_to_json(const ModalitySpec& m)
{
    json bands = json::array();
    for (const auto& b : m.bands)
        bands.push_back({{"kind", tok::to_string(b.kind)}, {"label", b.label}, {"radiometric_bits", b.radiometric_bits}});
    return {{"modality_id", m.modality_id}, {"bands", bands},          {"height", m.height},
            {"width", m.width},             {"timesteps", m.timesteps}, {"band_mean", m.band_mean},
            {"band_std", m.band_std}};
}

/// Strict: unknown keys raise ConfigError.
inline ModalitySpec modality_from_json(const json& j)
{
    static const std::vector<std::string> known{"modality_id", "bands",     "height",   "width",
                                                "timesteps",   "band_mean", "band_std"};
    if (!j.is_object())
        throw ConfigError("modality must be an object");
    for (auto it = j.begin(); it != j.end(); ++it)
        if (std::find(known.begin(), known.end(), it.key()) == known.end())
            throw ConfigError("unknown modality key '" + it.key() + "'");
    try {
        ModalitySpec m;
        m.modality_id = j.at("modality_id").get<std::string>();
        for (const auto& b : j.at("bands")) {
            for (auto it = b.begin(); it != b.end(); ++it)
                if (it.key() != "kind" && it.key() != "label" && it.key() != "radiometric_bits")
                    throw ConfigError("unknown band key '" + it.key() + "'");
            tok::BandDescriptor d;
            d.kind = tok::parse_band_kind(b.value("kind", std::string("optical")));
            d.label = b.at("label").get<std::string>();
            d.radiometric_bits = b.value("radiometric_bits", 16);
            m.bands.push_back(d);
        }
        m.height = j.at("height").get<std::size_t>();
        m.width = j.at("width").get<std::size_t>();
        m.timesteps = j.value("timesteps", std::size_t{1});
        m.band_mean = j.value("band_mean", std::vector<double>{});
        m.band_std = j.value("band_std", std::vector<double>{});
        m.validate();
        return m;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("modality: ") + e.what());
    }
}

// ---- sample blobs ---------------------------------------------------------

inline void put_u32(std::string& out, std::uint32_t v)
{
    for (int i = 0; i < 4; ++i)
        out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

inline std::uint32_t get_u32(const unsigned char* p)
{
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline std::string encode_blob(const GeoSample& s)
{
    const auto& m = *s.spec;
    std::string out;
    out.reserve(16 + 4 * s.values.size());
    for (auto v : {m.timesteps, m.height, m.width, m.n_bands()})
        put_u32(out, static_cast<std::uint32_t>(v));
    for (double v : s.values)
        put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    return out;
}

inline std::vector<double> decode_blob(const std::string& bytes, const ModalitySpec& m, const std::string& where)
{
    if (bytes.size() < 16)
        throw DataError(where + ": truncated header");
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
    const std::size_t T = get_u32(p), H = get_u32(p + 4), W = get_u32(p + 8), L = get_u32(p + 12);
    if (T != m.timesteps || H != m.height || W != m.width || L != m.n_bands())
        throw DataError(where + ": header shape does not match modality '" + m.modality_id + "'");
    const std::size_t n = T * H * W * L;
    if (bytes.size() != 16 + 4 * n)
        throw DataError(where + ": expected " + std::to_string(16 + 4 * n) + " bytes, found " +
                        std::to_string(bytes.size()));
    std::vector<double> values(n);
    for (std::size_t i = 0; i < n; ++i)
        values[i] = static_cast<double>(std::bit_cast<float>(get_u32(p + 16 + 4 * i)));
    return values;
}

inline std::string read_file(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    if (!in)
        throw DataError("cannot open " + p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_file(const fs::path& p, const std::string& bytes)
{
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out)
        throw DataError("cannot write " + p.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out)
        throw DataError("write failed for " + p.string());
}

inline std::string sample_blob_name(std::size_t index)
{
    std::ostringstream ss;
    ss << "samples/" << std::setw(6) << std::setfill('0') << index << ".bin";
    return ss.str();
}

// ---- manifest -------------------------------------------------------------

inline json target_to_json(const tok::Target& t)
{
    json j = json::object();
    if (t.label >= 0)
        j["label"] = t.label;
    if (!t.values.empty())
        j["values"] = t.values;
    if (!t.mask.empty())
        j["mask"] = t.mask;
    return j;
}

inline void save_dataset(const Dataset& ds, const fs::path& dir)
{
    fs::create_directories(dir / "samples");
    const double lat_range = ds.bbox.lat_max - ds.bbox.lat_min, lon_range = ds.bbox.lon_max - ds.bbox.lon_min;
    const double t_range = ds.time_span.end - ds.time_span.start;
    json samples = json::array();
    for (std::size_t i = 0; i < ds.samples.size(); ++i) {
        const auto& s = ds.samples[i];
        json times = json::array();
        for (const auto& t : s.time)
            times.push_back({{"value", ds.time_span.start + t.value * t_range}, {"half_width", t.half_width * t_range}});
        const std::string blob = sample_blob_name(i);
        samples.push_back({{"id", s.id},
                           {"modality", s.spec->modality_id},
                           {"blob", blob},
                           {"split", to_string(ds.splits[i])},
                           {"lat", {{"value", ds.bbox.lat_min + s.lat.value * lat_range},
                                    {"half_width", s.lat.half_width * lat_range}}},
                           {"lon", {{"value", ds.bbox.lon_min + s.lon.value * lon_range},
                                    {"half_width", s.lon.half_width * lon_range}}},
                           {"time", times},
                           {"target", target_to_json(s.target)}});
        write_file(dir / blob, encode_blob(s));
    }
    json modalities = json::array();
    for (const auto& m : ds.modalities)
        modalities.push_back(modality_to_json(*m));
    json manifest{{"format", "gpna-dataset"},
                  {"version", 1},
                  {"task", ds.task},
                  {"bbox", {{"lat", {ds.bbox.lat_min, ds.bbox.lat_max}}, {"lon", {ds.bbox.lon_min, ds.bbox.lon_max}}}},
                  {"time_span", {ds.time_span.start, ds.time_span.end}},
                  {"modalities", modalities},
                  {"planted", ds.planted},
                  {"samples", samples}};
    write_file(dir / "manifest.json", manifest.dump() + "\n");
}

inline Dataset load_dataset(const fs::path& dir)
{
    const fs::path manifest_path = dir / "manifest.json";
    if (!fs::exists(manifest_path))
        throw DataError("no manifest.json in " + dir.string());
    json j;
    try {
        j = json::parse(read_file(manifest_path));
    } catch (const json::parse_error& e) {
        throw DataError("manifest.json: " + std::string(e.what()));
    }
    try {
        if (j.at("format") != "gpna-dataset" || j.at("version") != 1)
            throw DataError("manifest.json: unsupported format");
        Dataset ds;
        ds.task = j.value("task", std::string());
        const auto lat = j.at("bbox").at("lat").get<std::vector<double>>();
        const auto lon = j.at("bbox").at("lon").get<std::vector<double>>();
        const auto span = j.at("time_span").get<std::vector<double>>();
        if (lat.size() != 2 || lon.size() != 2 || span.size() != 2 || !(lat[1] > lat[0]) || !(lon[1] > lon[0]) ||
            !(span[1] > span[0]))
            throw DataError("manifest.json: bounding box and time span need increasing [min, max] pairs");
        ds.bbox = {lat[0], lat[1], lon[0], lon[1]};
        ds.time_span = {span[0], span[1]};
        ds.planted = j.value("planted", json::object());
        std::map<std::string, std::shared_ptr<const ModalitySpec>> by_id;
        for (const auto& mj : j.at("modalities")) {
            ModalitySpec m;
            try {
                m = modality_from_json(mj);
            } catch (const ConfigError& e) {
                throw DataError(std::string("manifest.json: ") + e.what());
            }
            auto ptr = std::make_shared<const ModalitySpec>(m);
            if (!by_id.emplace(m.modality_id, ptr).second)
                throw DataError("manifest.json: modality '" + m.modality_id + "' listed twice");
            ds.modalities.push_back(ptr);
        }
        auto norm = [](double v, double lo, double hi) { return (v - lo) / (hi - lo); };
        for (const auto& sj : j.at("samples")) {
            GeoSample s;
            s.id = sj.at("id").get<std::string>();
            const auto mid = sj.at("modality").get<std::string>();
            auto it = by_id.find(mid);
            if (it == by_id.end())
                throw DataError("sample '" + s.id + "' references unknown modality '" + mid + "'");
            s.spec = it->second;
            s.lat = {norm(sj.at("lat").at("value").get<double>(), lat[0], lat[1]),
                     sj.at("lat").value("half_width", 0.0) / (lat[1] - lat[0])};
            s.lon = {norm(sj.at("lon").at("value").get<double>(), lon[0], lon[1]),
                     sj.at("lon").value("half_width", 0.0) / (lon[1] - lon[0])};
            for (const auto& tj : sj.at("time"))
                s.time.push_back({norm(tj.at("value").get<double>(), span[0], span[1]),
                                  tj.value("half_width", 0.0) / (span[1] - span[0])});
            const auto& tj = sj.at("target");
            s.target.label = tj.value("label", -1);
            s.target.values = tj.value("values", std::vector<double>{});
            s.target.mask = tj.value("mask", std::vector<int>{});
            const std::string blob = sj.at("blob").get<std::string>();
            s.values = decode_blob(read_file(dir / blob), *s.spec, blob);
            try {
                s.validate();
            } catch (const InputError& e) {
                throw DataError(e.what());
            }
            ds.splits.push_back(parse_split(sj.value("split", std::string("train"))));
            ds.samples.push_back(std::move(s));
        }
        if (ds.samples.empty())
            throw DataError("manifest.json lists no samples");
        return ds;
    } catch (const json::exception& e) {
        throw DataError("manifest.json: " + std::string(e.what()));
    }
}

}  // namespace gpna::data
