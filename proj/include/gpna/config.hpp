#pragma once
// RunConfig: the single JSON document driving every command. Parsing is strict;
// unknown keys and wrong types raise ConfigError before any work starts.
// Missing keys take the defaults of the corresponding structs. Sections without
// their own "seed" inherit the top-level seed.

#include <cstdlib>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gpna/batch_planner.hpp"
#include "gpna/dataset.hpp"
#include "gpna/datasynth.hpp"
#include "gpna/model.hpp"
#include "gpna/trainer.hpp"

namespace gpna::cfg {

using nlohmann::json;

struct EvalConfig {
    std::size_t batch_size = 16;
};

struct GradCheckConfig {
    std::size_t coords_per_group = 200;
    double step = 1e-4;
    bool extrapolate = true;
    double tolerance = 1e-4;
    double floor = 1e-8;
    std::size_t n_samples = 2;  // synthetic samples in the checked batch
};

struct RunConfig {
    std::uint64_t seed = 1;
    model::ModelConfig model;
    plan::PlannerConfig planner;
    train::TrainConfig train;
    synth::SynthSpec synth;
    EvalConfig eval;
    GradCheckConfig grad_check;
    std::optional<std::uint64_t> model_seed, train_seed, synth_seed;

    /// Seeds after inheritance from the top-level seed.
    void resolve_seeds()
    {
        model.seed = model_seed.value_or(seed);
        train.seed = train_seed.value_or(seed);
        synth.seed = synth_seed.value_or(seed);
    }
};

namespace detail {

inline void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where)
{
    if (!j.is_object())
        throw ConfigError(where + " must be a JSON object");
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!allowed.contains(it.key()))
            throw ConfigError("unknown key '" + it.key() + "' in " + where);
}

template <class T>
void read(const json& j, const char* key, T& out, const std::string& where)
{
    if (!j.contains(key))
        return;
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError(where + "." + key + " has the wrong type");
    }
}

inline encoding::BankConfig read_bank(const json& j, encoding::BankConfig b, const std::string& where)
{
    check_keys(j, {"mode", "n_freqs", "f_min", "f_max", "dim", "n_angles"}, where);
    std::string mode = encoding::to_string(b.mode);
    read(j, "mode", mode, where);
    b.mode = encoding::parse_bank_mode(mode);
    read(j, "n_freqs", b.n_freqs, where);
    read(j, "f_min", b.f_min, where);
    read(j, "f_max", b.f_max, where);
    read(j, "dim", b.dim, where);
    read(j, "n_angles", b.n_angles, where);
    encoding::make_frequency_bank(b);  // validates
    return b;
}

inline json bank_json(const encoding::BankConfig& b)
{
    return {{"mode", encoding::to_string(b.mode)}, {"n_freqs", b.n_freqs}, {"f_min", b.f_min},
            {"f_max", b.f_max},                    {"dim", b.dim},         {"n_angles", b.n_angles}};
}

inline std::string to_string(train::OptimizerKind k)
{
    return k == train::OptimizerKind::adam ? "adam" : "sgd";
}

inline std::string to_string(train::Schedule s)
{
    return s == train::Schedule::cosine ? "cosine" : "constant";
}

inline std::string to_string(plan::SplitRule r)
{
    return r == plan::SplitRule::greedy ? "greedy" : "least_waste";
}

inline plan::SplitRule parse_split_rule(const std::string& s)
{
    if (s == "least_waste")
        return plan::SplitRule::least_waste;
    if (s == "greedy")
        return plan::SplitRule::greedy;
    throw ConfigError("unknown split rule '" + s + "'");
}

}  // namespace detail

inline RunConfig parse_run_config(const json& j)
{
    using namespace detail;
    RunConfig rc;
    check_keys(j, {"seed", "tokenizer", "backbone", "heads", "segmentation_bank", "planner", "train", "synth", "eval",
                   "grad_check"},
               "config");
    read(j, "seed", rc.seed, "config");

    auto& mc = rc.model;
    if (j.contains("tokenizer")) {
        const auto& t = j.at("tokenizer");
        check_keys(t, {"channels", "position_mode", "spatial_bank", "temporal_bank", "spectral_bank", "seed"},
                   "tokenizer");
        std::vector<std::size_t> ch(mc.tokenizer.channels.begin(), mc.tokenizer.channels.end());
        read(t, "channels", ch, "tokenizer");
        if (ch.size() != 3)
            throw ConfigError("tokenizer.channels needs three widths");
        std::copy(ch.begin(), ch.end(), mc.tokenizer.channels.begin());
        std::string pm = mc.tokenizer.position_mode == tok::PositionMode::add ? "add" : "concat";
        read(t, "position_mode", pm, "tokenizer");
        mc.tokenizer.position_mode = tok::parse_position_mode(pm);
        if (t.contains("spatial_bank"))
            mc.tokenizer.spatial = read_bank(t.at("spatial_bank"), mc.tokenizer.spatial, "tokenizer.spatial_bank");
        if (t.contains("temporal_bank"))
            mc.tokenizer.temporal =
                read_bank(t.at("temporal_bank"), mc.tokenizer.temporal, "tokenizer.temporal_bank");
        if (t.contains("spectral_bank"))
            mc.tokenizer.spectral =
                read_bank(t.at("spectral_bank"), mc.tokenizer.spectral, "tokenizer.spectral_bank");
        read(t, "seed", mc.tokenizer.seed, "tokenizer");
    }
    if (j.contains("backbone")) {
        const auto& b = j.at("backbone");
        check_keys(b, {"n_latents", "latent_dim", "n_self_layers", "n_heads", "mlp_ratio", "init_std", "ln_eps", "seed"},
                   "backbone");
        read(b, "n_latents", mc.backbone.n_latents, "backbone");
        read(b, "latent_dim", mc.backbone.latent_dim, "backbone");
        read(b, "n_self_layers", mc.backbone.n_self_layers, "backbone");
        read(b, "n_heads", mc.backbone.n_heads, "backbone");
        read(b, "mlp_ratio", mc.backbone.mlp_ratio, "backbone");
        read(b, "init_std", mc.backbone.init_std, "backbone");
        read(b, "ln_eps", mc.backbone.ln_eps, "backbone");
        if (b.contains("seed")) {
            std::uint64_t s = 0;
            read(b, "seed", s, "backbone");
            rc.model_seed = s;
        }
        mc.backbone.validate();
    }
    if (j.contains("heads")) {
        if (!j.at("heads").is_array())
            throw ConfigError("heads must be an array");
        for (const auto& h : j.at("heads")) {
            check_keys(h, {"id", "kind", "classes", "outputs", "height", "width"}, "heads[]");
            model::HeadSpec spec;
            std::string kind = "classification";
            read(h, "id", spec.id, "heads[]");
            read(h, "kind", kind, "heads[]");
            spec.kind = model::parse_head_kind(kind);
            read(h, "classes", spec.classes, "heads[]");
            read(h, "outputs", spec.outputs, "heads[]");
            read(h, "height", spec.height, "heads[]");
            read(h, "width", spec.width, "heads[]");
            spec.validate();
            mc.heads.push_back(spec);
        }
    }
    if (j.contains("segmentation_bank") && !j.at("segmentation_bank").is_null())
        mc.segmentation_bank = read_bank(j.at("segmentation_bank"), mc.tokenizer.spatial, "segmentation_bank");

    if (j.contains("planner")) {
        const auto& p = j.at("planner");
        check_keys(p, {"max_pad", "min_pts", "enforce_budget", "split", "max_cluster_size"}, "planner");
        read(p, "max_pad", rc.planner.max_pad, "planner");
        read(p, "min_pts", rc.planner.min_pts, "planner");
        read(p, "enforce_budget", rc.planner.enforce_budget, "planner");
        std::string split = to_string(rc.planner.split);
        read(p, "split", split, "planner");
        rc.planner.split = parse_split_rule(split);
        read(p, "max_cluster_size", rc.planner.max_cluster_size, "planner");
        if (rc.planner.min_pts == 0)
            throw ConfigError("planner.min_pts must be positive");
    }
    if (j.contains("train")) {
        const auto& t = j.at("train");
        check_keys(t, {"steps", "lr", "optimizer", "beta1", "beta2", "eps", "seed", "batch_size", "clip_norm",
                       "schedule", "warmup_steps"},
                   "train");
        auto& tc = rc.train;
        read(t, "steps", tc.steps, "train");
        read(t, "lr", tc.lr, "train");
        std::string opt = to_string(tc.optimizer);
        read(t, "optimizer", opt, "train");
        tc.optimizer = train::parse_optimizer(opt);
        read(t, "beta1", tc.beta1, "train");
        read(t, "beta2", tc.beta2, "train");
        read(t, "eps", tc.eps, "train");
        read(t, "batch_size", tc.batch_size, "train");
        read(t, "clip_norm", tc.clip_norm, "train");
        std::string sched = to_string(tc.schedule);
        read(t, "schedule", sched, "train");
        tc.schedule = train::parse_schedule(sched);
        read(t, "warmup_steps", tc.warmup_steps, "train");
        if (t.contains("seed")) {
            std::uint64_t s = 0;
            read(t, "seed", s, "train");
            rc.train_seed = s;
        }
        tc.validate();
    }
    if (j.contains("synth")) {
        const auto& s = j.at("synth");
        check_keys(s, {"task",           "modality",       "n_samples",     "seed",        "test_fraction",
                       "pixel_noise",    "level_std",      "location_extent", "location_half_width",
                       "time_half_width", "threshold",     "class_gap",     "coefficients", "target_noise",
                       "n_rects",        "rect_min",       "rect_max",      "contrast",    "band_weights"},
                   "synth");
        auto& sp = rc.synth;
        std::string task = synth::to_string(sp.task);
        read(s, "task", task, "synth");
        sp.task = synth::parse_task_kind(task);
        if (!s.contains("modality"))
            throw ConfigError("synth.modality is required");
        sp.modality = data::modality_from_json(s.at("modality"));
        read(s, "n_samples", sp.n_samples, "synth");
        read(s, "test_fraction", sp.test_fraction, "synth");
        read(s, "pixel_noise", sp.pixel_noise, "synth");
        read(s, "level_std", sp.level_std, "synth");
        read(s, "location_extent", sp.location_extent, "synth");
        read(s, "location_half_width", sp.location_half_width, "synth");
        read(s, "time_half_width", sp.time_half_width, "synth");
        read(s, "threshold", sp.threshold, "synth");
        read(s, "class_gap", sp.class_gap, "synth");
        read(s, "coefficients", sp.coefficients, "synth");
        read(s, "target_noise", sp.target_noise, "synth");
        read(s, "n_rects", sp.n_rects, "synth");
        read(s, "rect_min", sp.rect_min, "synth");
        read(s, "rect_max", sp.rect_max, "synth");
        read(s, "contrast", sp.contrast, "synth");
        read(s, "band_weights", sp.band_weights, "synth");
        if (s.contains("seed")) {
            std::uint64_t v = 0;
            read(s, "seed", v, "synth");
            rc.synth_seed = v;
        }
        sp.validate();
    }
    if (j.contains("eval")) {
        const auto& e = j.at("eval");
        check_keys(e, {"batch_size"}, "eval");
        read(e, "batch_size", rc.eval.batch_size, "eval");
        if (rc.eval.batch_size == 0)
            throw ConfigError("eval.batch_size must be positive");
    }
    if (j.contains("grad_check")) {
        const auto& g = j.at("grad_check");
        check_keys(g, {"coords_per_group", "step", "extrapolate", "tolerance", "floor", "n_samples"}, "grad_check");
        auto& gc = rc.grad_check;
        read(g, "coords_per_group", gc.coords_per_group, "grad_check");
        read(g, "step", gc.step, "grad_check");
        read(g, "tolerance", gc.tolerance, "grad_check");
        read(g, "extrapolate", gc.extrapolate, "grad_check");
        read(g, "floor", gc.floor, "grad_check");
        read(g, "n_samples", gc.n_samples, "grad_check");
        if (gc.coords_per_group == 0 || !(gc.step > 0.0) || !(gc.tolerance > 0.0) || !(gc.floor > 0.0) ||
            gc.n_samples == 0)
            throw ConfigError("grad_check settings must be positive");
    }
    rc.resolve_seeds();
    return rc;
}

/// Reads and parses a config file. The GPNA_SEED environment variable, when set,
/// replaces the top-level seed.
inline RunConfig load_run_config(const std::filesystem::path& path)
{
    json j;
    try {
        j = json::parse(data::read_file(path));
    } catch (const json::parse_error& e) {
        throw ConfigError(path.string() + ": " + e.what());
    } catch (const DataError& e) {
        throw ConfigError(e.what());
    }
    RunConfig rc = parse_run_config(j);
    if (const char* env = std::getenv("GPNA_SEED")) {
        try {
            std::size_t used = 0;
            const auto v = std::stoull(env, &used);
            if (used != std::string(env).size())
                throw std::invalid_argument("trailing characters");
            rc.seed = v;
        } catch (const std::exception&) {
            throw ConfigError(std::string("GPNA_SEED is not an unsigned integer: '") + env + "'");
        }
        rc.resolve_seeds();
    }
    return rc;
}

/// Fully resolved document (defaults filled in, seeds explicit).
inline json to_json(const RunConfig& rc)
{
    using namespace detail;
    const auto& mc = rc.model;
    json heads = json::array();
    for (const auto& h : mc.heads)
        heads.push_back({{"id", h.id},         {"kind", model::to_string(h.kind)}, {"classes", h.classes},
                         {"outputs", h.outputs}, {"height", h.height},             {"width", h.width}});
    const auto& sp = rc.synth;
    json j{{"seed", rc.seed},
           {"tokenizer",
            {{"channels", mc.tokenizer.channels},
             {"position_mode", mc.tokenizer.position_mode == tok::PositionMode::add ? "add" : "concat"},
             {"spatial_bank", bank_json(mc.tokenizer.spatial)},
             {"temporal_bank", bank_json(mc.tokenizer.temporal)},
             {"spectral_bank", bank_json(mc.tokenizer.spectral)},
             {"seed", mc.tokenizer.seed}}},
           {"backbone",
            {{"n_latents", mc.backbone.n_latents},
             {"latent_dim", mc.backbone.latent_dim},
             {"n_self_layers", mc.backbone.n_self_layers},
             {"n_heads", mc.backbone.n_heads},
             {"mlp_ratio", mc.backbone.mlp_ratio},
             {"init_std", mc.backbone.init_std},
             {"ln_eps", mc.backbone.ln_eps},
             {"seed", mc.seed}}},
           {"heads", heads},
           {"segmentation_bank", mc.segmentation_bank ? bank_json(*mc.segmentation_bank) : json(nullptr)},
           {"planner",
            {{"max_pad", rc.planner.max_pad},
             {"min_pts", rc.planner.min_pts},
             {"enforce_budget", rc.planner.enforce_budget},
             {"split", to_string(rc.planner.split)},
             {"max_cluster_size", rc.planner.max_cluster_size}}},
           {"train",
            {{"steps", rc.train.steps},
             {"lr", rc.train.lr},
             {"optimizer", to_string(rc.train.optimizer)},
             {"beta1", rc.train.beta1},
             {"beta2", rc.train.beta2},
             {"eps", rc.train.eps},
             {"seed", rc.train.seed},
             {"batch_size", rc.train.batch_size},
             {"clip_norm", rc.train.clip_norm},
             {"schedule", to_string(rc.train.schedule)},
             {"warmup_steps", rc.train.warmup_steps}}},
           {"eval", {{"batch_size", rc.eval.batch_size}}},
           {"grad_check",
            {{"coords_per_group", rc.grad_check.coords_per_group},
             {"step", rc.grad_check.step},
             {"tolerance", rc.grad_check.tolerance},
             {"extrapolate", rc.grad_check.extrapolate},
             {"floor", rc.grad_check.floor},
             {"n_samples", rc.grad_check.n_samples}}}};
    if (!sp.modality.bands.empty())
        j["synth"] = {{"task", synth::to_string(sp.task)},
                      {"modality", data::modality_to_json(sp.modality)},
                      {"n_samples", sp.n_samples},
                      {"seed", sp.seed},
                      {"test_fraction", sp.test_fraction},
                      {"pixel_noise", sp.pixel_noise},
                      {"level_std", sp.level_std},
                      {"location_extent", sp.location_extent},
                      {"location_half_width", sp.location_half_width},
                      {"time_half_width", sp.time_half_width},
                      {"threshold", sp.threshold},
                      {"class_gap", sp.class_gap},
                      {"coefficients", sp.coefficients},
                      {"target_noise", sp.target_noise},
                      {"n_rects", sp.n_rects},
                      {"rect_min", sp.rect_min},
                      {"rect_max", sp.rect_max},
                      {"contrast", sp.contrast},
                      {"band_weights", sp.band_weights}};
    return j;
}

}  // namespace gpna::cfg
