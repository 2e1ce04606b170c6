#pragma once
// Named parameter registry and the on-disk checkpoint format.
//
// A checkpoint is two files:
//   <stem>.json  manifest: {"format": "gpna-checkpoint", "version": 1, "dtype": "float64",
//                "byte_order": "little", "blob": "<stem>.bin", "total_elements": N,
//                "params": [{"name", "shape", "offset", "count", "trainable"}, ...]}
//   <stem>.bin   all parameter values back to back, row-major, IEEE-754 binary64,
//                little-endian; parameter i starts at byte 8 * offset_i.
// Parameters appear in registration order.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "gpna/error.hpp"
#include "gpna/numerics/tensor.hpp"

namespace gpna::num {

class ParamStore {
public:
    struct Entry {
        std::string name;
        Tensor tensor;
        bool trainable;
    };

    /// Registers a new array. Names are unique.
    Tensor add(const std::string& name, Shape shape, std::vector<double> values, bool trainable = true)
    {
        if (index_.contains(name))
            throw ConfigError("parameter '" + name + "' registered twice");
        Tensor t = Tensor::make(std::move(shape), std::move(values), trainable);
        index_[name] = entries_.size();
        entries_.push_back({name, t, trainable});
        return t;
    }

    bool contains(const std::string& name) const { return index_.contains(name); }

    const Tensor& get(const std::string& name) const
    {
        auto it = index_.find(name);
        if (it == index_.end())
            throw ConfigError("unknown parameter '" + name + "'");
        return entries_[it->second].tensor;
    }

    const std::vector<Entry>& entries() const { return entries_; }
    std::vector<Entry>& entries() { return entries_; }

    std::size_t total_elements(bool trainable_only = false) const
    {
        std::size_t n = 0;
        for (const auto& e : entries_)
            if (!trainable_only || e.trainable)
                n += e.tensor.size();
        return n;
    }

    void zero_grad()
    {
        for (auto& e : entries_)
            e.tensor.zero_grad();
    }

    /// Writes <stem>.json and <stem>.bin.
    void save(const std::filesystem::path& stem) const
    {
        using nlohmann::json;
        auto blob_path = stem;
        blob_path += ".bin";
        auto manifest_path = stem;
        manifest_path += ".json";
        json params = json::array();
        std::size_t offset = 0;
        std::ofstream blob(blob_path, std::ios::binary | std::ios::trunc);
        if (!blob)
            throw DataError("cannot write " + blob_path.string());
        for (const auto& e : entries_) {
            params.push_back({{"name", e.name},
                              {"shape", e.tensor.shape()},
                              {"offset", offset},
                              {"count", e.tensor.size()},
                              {"trainable", e.trainable}});
            for (double v : e.tensor.values())
                write_le(blob, v);
            offset += e.tensor.size();
        }
        json manifest = {{"format", "gpna-checkpoint"},
                         {"version", 1},
                         {"dtype", "float64"},
                         {"byte_order", "little"},
                         {"blob", blob_path.filename().string()},
                         {"total_elements", offset},
                         {"params", params}};
        std::ofstream out(manifest_path, std::ios::trunc);
        if (!out)
            throw DataError("cannot write " + manifest_path.string());
        out << manifest.dump(2) << '\n';
    }

    /// Overwrites the values of every registered parameter from a checkpoint.
    /// Names and shapes must match exactly; extra entries in the file are an error.
    void load(const std::filesystem::path& stem)
    {
        using nlohmann::json;
        auto manifest_path = stem;
        manifest_path += ".json";
        std::ifstream in(manifest_path);
        if (!in)
            throw DataError("cannot read checkpoint manifest " + manifest_path.string());
        json manifest;
        try {
            manifest = json::parse(in);
        } catch (const json::exception& e) {
            throw DataError("malformed checkpoint manifest: " + std::string(e.what()));
        }
        if (manifest.value("format", "") != "gpna-checkpoint" || manifest.value("dtype", "") != "float64")
            throw DataError("not a float64 gpna checkpoint: " + manifest_path.string());
        const auto blob_path = manifest_path.parent_path() / manifest.at("blob").get<std::string>();
        std::ifstream blob(blob_path, std::ios::binary);
        if (!blob)
            throw DataError("cannot read checkpoint blob " + blob_path.string());
        std::vector<char> bytes((std::istreambuf_iterator<char>(blob)), std::istreambuf_iterator<char>());
        const auto total = manifest.at("total_elements").get<std::size_t>();
        if (bytes.size() != total * 8)
            throw DataError("checkpoint blob has " + std::to_string(bytes.size()) + " bytes, expected " +
                            std::to_string(total * 8));
        const auto& params = manifest.at("params");
        if (params.size() != entries_.size())
            throw DataError("checkpoint holds " + std::to_string(params.size()) + " parameters, model has " +
                            std::to_string(entries_.size()));
        for (const auto& p : params) {
            const auto name = p.at("name").get<std::string>();
            auto it = index_.find(name);
            if (it == index_.end())
                throw DataError("checkpoint parameter '" + name + "' not in model");
            Tensor& t = entries_[it->second].tensor;
            if (p.at("shape").get<Shape>() != t.shape())
                throw DataError("checkpoint parameter '" + name + "' has shape " +
                                to_string(p.at("shape").get<Shape>()) + ", model expects " + to_string(t.shape()));
            const auto offset = p.at("offset").get<std::size_t>();
            if ((offset + t.size()) * 8 > bytes.size())
                throw DataError("checkpoint parameter '" + name + "' overruns blob");
            auto dst = t.mutable_values();
            for (std::size_t i = 0; i < dst.size(); ++i)
                dst[i] = read_le(bytes.data() + (offset + i) * 8);
        }
    }

private:
    static void write_le(std::ostream& os, double v)
    {
        auto bits = std::bit_cast<std::uint64_t>(v);
        char buf[8];
        for (int i = 0; i < 8; ++i)
            buf[i] = static_cast<char>((bits >> (8 * i)) & 0xffu);
        os.write(buf, 8);
    }

    static double read_le(const char* p)
    {
        std::uint64_t bits = 0;
        for (int i = 0; i < 8; ++i)
            bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[i])) << (8 * i);
        return std::bit_cast<double>(bits);
    }

    std::vector<Entry> entries_;
    std::map<std::string, std::size_t> index_;
};

}  // namespace gpna::num
