#pragma once
// Subcommands of the `gpna` tool. Structured output is JSON on stdout; failures
// print {"error": {...}} on stderr and map to exit codes
//   0 ok, 2 configuration, 3 data or input, 4 numerical failure.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "gpna/config.hpp"
#include "gpna/dataset.hpp"
#include "gpna/datasynth.hpp"
#include "gpna/model.hpp"
#include "gpna/trainer.hpp"

namespace gpna::cli {

namespace fs = std::filesystem;
using nlohmann::json;

enum ExitCode : int { ok = 0, config_error = 2, data_error = 3, numeric_error = 4 };

/// Heads implied by a dataset when the config declares none.
inline std::vector<model::HeadSpec> default_heads(const data::Dataset& ds)
{
    model::HeadSpec h;
    if (ds.task == "classification") {
        int top = 1;
        for (const auto& s : ds.samples)
            top = std::max(top, s.target.label);
        h = {"label", model::HeadKind::classification, static_cast<std::size_t>(top) + 1, 1, 0, 0};
    } else if (ds.task == "regression" || ds.task == "paired_temporal") {
        h = {"target", model::HeadKind::regression, 2, ds.samples.front().target.values.size(), 0, 0};
    } else if (ds.task == "segmentation") {
        const auto& m = *ds.modalities.front();
        h = {"mask", model::HeadKind::segmentation, 2, 1, m.height, m.width};
    } else {
        throw ConfigError("config declares no heads and dataset task '" + ds.task + "' implies none");
    }
    return {h};
}

inline model::ModelConfig model_config_for(const cfg::RunConfig& rc, const data::Dataset& ds)
{
    auto mc = rc.model;
    if (mc.heads.empty())
        mc.heads = default_heads(ds);
    return mc;
}

inline fs::path checkpoint_stem(const fs::path& p)
{
    if (fs::is_directory(p))
        return p / "checkpoint";
    if (p.extension() == ".json" || p.extension() == ".bin")
        return fs::path(p).replace_extension();
    return p;
}

inline void write_json(const fs::path& p, const json& j)
{
    data::write_file(p, j.dump(2) + "\n");
}

inline json eval_json(const std::vector<metrics::EvalResult>& results)
{
    json out = json::array();
    for (const auto& r : results)
        out.push_back({{"head", r.head}, {"metric", r.metric}, {"value", r.value}, {"n_samples", r.n_samples}});
    return out;
}

inline std::vector<std::size_t> parse_counts(const std::string& s)
{
    std::vector<std::size_t> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            const long long v = std::stoll(item, &used);
            if (used != item.size() || v < 0)
                throw std::invalid_argument(item);
            out.push_back(static_cast<std::size_t>(v));
        } catch (const std::exception&) {
            throw ConfigError("--counts expects comma-separated non-negative integers, got '" + item + "'");
        }
    }
    if (out.empty())
        throw ConfigError("--counts is empty");
    return out;
}

inline std::vector<double> parse_reals(const std::string& s, const char* flag)
{
    std::vector<double> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            out.push_back(std::stod(item, &used));
            if (used != item.size())
                throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw ConfigError(std::string(flag) + " expects comma-separated numbers, got '" + item + "'");
        }
    }
    if (out.empty())
        throw ConfigError(std::string(flag) + " is empty");
    return out;
}

inline cfg::RunConfig config_or_default(const std::string& path)
{
    if (path.empty()) {
        cfg::RunConfig rc = cfg::parse_run_config(json::object());
        return rc;
    }
    return cfg::load_run_config(path);
}

// ---- commands ---------------------------------------------------------------

inline json cmd_synth(const cfg::RunConfig& rc, const fs::path& out)
{
    if (rc.synth.modality.bands.empty())
        throw ConfigError("config has no synth section");
    const auto ds = synth::generate(rc.synth);
    data::save_dataset(ds, out);
    write_json(out / "config.json", cfg::to_json(rc));
    return {{"command", "synth"},
            {"out", out.string()},
            {"task", ds.task},
            {"n_train", ds.subset(data::Split::train).size()},
            {"n_test", ds.subset(data::Split::test).size()}};
}

inline json cmd_tokenize(const cfg::RunConfig& rc, const fs::path& data_dir, const std::string& sample_id)
{
    const auto ds = data::load_dataset(data_dir);
    const tok::GeoSample* sample = nullptr;
    for (const auto& s : ds.samples)
        if (s.id == sample_id)
            sample = &s;
    if (!sample)
        throw DataError("no sample '" + sample_id + "' in " + data_dir.string());
    model::Model model(model_config_for(rc, ds), ds.modality_specs());
    num::Tape tape;
    tape.set_grad_enabled(false);
    const auto tm = model.tokenize(tape, *sample);
    auto row = [&](std::size_t r) {
        const auto v = tm.tokens.values().subspan(r * tm.width(), tm.width());
        return std::vector<double>(v.begin(), v.end());
    };
    auto prov = [&](std::size_t r) {
        const auto& p = tm.provenance[r];
        return json{p.t, p.h, p.w, p.l};
    };
    const std::size_t last = tm.n_tokens() - 1;
    return {{"command", "tokenize"},
            {"sample_id", sample_id},
            {"shape", {tm.n_tokens(), tm.width()}},
            {"n_valid", tm.n_valid()},
            {"first_row", row(0)},
            {"first_provenance", prov(0)},
            {"last_row", row(last)},
            {"last_provenance", prov(last)}};
}

inline json plan_json(const plan::BatchPlan& p, const std::vector<std::size_t>& counts)
{
    const auto report = plan::waste_report(p, counts);
    json clusters = json::array();
    for (const auto& c : p.clusters)
        clusters.push_back({{"members", c.members}, {"target_len", c.target_len}, {"waste", c.waste}});
    return {{"clusters", clusters},
            {"total_waste", report.total_waste},
            {"padding_ratio", report.padding_ratio},
            {"batch_count", report.batch_count}};
}

inline json cmd_plan_batches(const cfg::RunConfig& rc, const std::vector<std::size_t>& counts,
                             std::optional<std::size_t> max_pad)
{
    auto pc = rc.planner;
    if (max_pad)
        pc.max_pad = *max_pad;
    const auto p = plan::plan_batches(counts, pc);
    json j = plan_json(p, counts);
    j["command"] = "plan-batches";
    j["max_pad"] = pc.max_pad;
    j["counts"] = counts;
    return j;
}

inline json cmd_train(const cfg::RunConfig& rc, const fs::path& data_dir, const fs::path& out)
{
    const auto ds = data::load_dataset(data_dir);
    const auto train_set = ds.subset(data::Split::train);
    if (train_set.empty())
        throw DataError("dataset has no training samples");
    model::Model model(model_config_for(rc, ds), ds.modality_specs());
    const auto result = train::train(model, train_set, rc.train, rc.planner);
    fs::create_directories(out);
    model.params().save(out / "checkpoint");
    {
        std::ofstream csv(out / "loss.csv", std::ios::trunc);
        train::write_loss_csv(csv, model, result.trace);
    }
    write_json(out / "config.json", cfg::to_json(rc));
    json plan = plan_json(result.plan, train::token_counts(train_set));
    json summary{{"command", "train"},
                 {"out", out.string()},
                 {"steps", result.trace.size()},
                 {"final_loss", result.trace.back().losses.back()},
                 {"parameters", model.params().total_elements(true)},
                 {"batch_plan", {{"clusters", plan["batch_count"]}, {"total_waste", plan["total_waste"]}}}};
    write_json(out / "train_summary.json", summary);
    return summary;
}

/// Writes <dir>/<head>/<sample>.pgm (binary greyscale, pixel value = class index)
/// and <sample>.json with per-pixel softmax scores, for every segmentation head.
inline void write_segmentation_maps(const model::Model& model, const std::vector<const tok::GeoSample*>& samples,
                                    const fs::path& dir, std::size_t batch_size)
{
    const auto pred = train::predict(model, samples, batch_size);
    for (const auto& spec : model.config().heads) {
        if (spec.kind != model::HeadKind::segmentation)
            continue;
        if (spec.classes > 256)
            throw ConfigError("segmentation head '" + spec.id + "' has too many classes for an 8-bit map");
        const auto head_dir = dir / spec.id;
        fs::create_directories(head_dir);
        const auto& outs = pred.outputs.at(spec.id);
        for (std::size_t i = 0; i < samples.size(); ++i) {
            const auto labels = train::argmax_rows(outs[i], spec.classes);
            std::ostringstream pgm;
            pgm << "P5\n" << spec.width << ' ' << spec.height << "\n255\n";
            for (int c : labels)
                pgm.put(static_cast<char>(c));
            data::write_file(head_dir / (samples[i]->id + ".pgm"), pgm.str());

            json scores = json::array();
            for (std::size_t px = 0; px < labels.size(); ++px) {
                const double* z = outs[i].data() + px * spec.classes;
                const double mx = *std::max_element(z, z + spec.classes);
                std::vector<double> p(spec.classes);
                double total = 0.0;
                for (std::size_t c = 0; c < spec.classes; ++c)
                    total += p[c] = std::exp(z[c] - mx);
                for (auto& v : p)
                    v /= total;
                scores.push_back(p);
            }
            write_json(head_dir / (samples[i]->id + ".json"), {{"head", spec.id},
                                                               {"sample", samples[i]->id},
                                                               {"height", spec.height},
                                                               {"width", spec.width},
                                                               {"classes", spec.classes},
                                                               {"scores", scores}});
        }
    }
}

inline json cmd_eval(const cfg::RunConfig& rc, const fs::path& checkpoint, const fs::path& data_dir,
                     const std::string& split, const std::string& out, const std::string& predictions = {})
{
    const auto ds = data::load_dataset(data_dir);
    const auto samples = split == "all" ? ds.all() : ds.subset(data::parse_split(split));
    if (samples.empty())
        throw DataError("no samples in split '" + split + "'");
    model::Model model(model_config_for(rc, ds), ds.modality_specs());
    model.params().load(checkpoint_stem(checkpoint));
    const auto results = train::evaluate(model, samples, rc.eval.batch_size);
    json j = eval_json(results);
    if (!out.empty())
        write_json(out, j);
    if (!predictions.empty())
        write_segmentation_maps(model, samples, predictions, rc.eval.batch_size);
    return j;
}

/// Gradient check of the full model on a small synthetic batch drawn from the
/// config's synth section (or a two-band 16x16 classification set).
inline json cmd_grad_check(const cfg::RunConfig& rc, std::optional<double> tolerance, bool& passed)
{
    auto spec = rc.synth;
    if (spec.modality.bands.empty()) {
        spec.modality.modality_id = "grad-check";
        spec.modality.bands = {{tok::BandKind::optical, "b0", 16}, {tok::BandKind::optical, "b1", 16}};
        spec.modality.height = spec.modality.width = 16;
    }
    spec.n_samples = std::max<std::size_t>(rc.grad_check.n_samples + 1, 2);
    spec.test_fraction = 1.0 / static_cast<double>(spec.n_samples);
    const auto ds = synth::generate(spec);
    const auto batch = ds.subset(data::Split::train);
    model::Model model(model_config_for(rc, ds), ds.modality_specs());
    train::GradCheckOptions opt;
    opt.coords_per_group = rc.grad_check.coords_per_group;
    opt.step = rc.grad_check.step;
    opt.tolerance = tolerance.value_or(rc.grad_check.tolerance);
    opt.extrapolate = rc.grad_check.extrapolate;
    opt.floor = rc.grad_check.floor;
    opt.seed = rc.seed;
    auto loss = [&](num::Tape& tape) {
        const auto fr = model.forward(tape, batch);
        return model.loss(tape, fr, batch);
    };
    const auto report = train::grad_check(loss, model.params(), opt);
    passed = report.passed;
    json groups = json::array();
    for (const auto& g : report.groups)
        groups.push_back({{"group", g.group},
                          {"n_coords", g.n_coords},
                          {"worst_relative_error", g.worst},
                          {"worst_param", g.worst_param},
                          {"worst_index", g.worst_index},
                          {"analytic", g.analytic},
                          {"numeric", g.numeric}});
    return {{"command", "grad-check"},
            {"passed", report.passed},
            {"tolerance", opt.tolerance},
            {"step", opt.step},
            {"extrapolate", opt.extrapolate},
            {"worst_relative_error", report.worst},
            {"n_coords", report.n_coords},
            {"groups", groups}};
}

inline json cmd_encode(const std::vector<double>& x, const std::vector<double>& dx, const std::string& bank_config)
{
    encoding::BankConfig bc;
    bc.dim = x.size();
    if (!bank_config.empty()) {
        json j;
        try {
            j = fs::exists(bank_config) ? json::parse(data::read_file(bank_config)) : json::parse(bank_config);
        } catch (const json::parse_error& e) {
            throw ConfigError("--bank-config: " + std::string(e.what()));
        }
        bc = cfg::detail::read_bank(j, bc, "bank-config");
    }
    const auto bank = encoding::make_frequency_bank(bc);
    if (!dx.empty() && dx.size() != x.size())
        throw ConfigError("--dx needs one half-width per coordinate");
    std::vector<tok::UncertainScalar> u;
    for (std::size_t i = 0; i < x.size(); ++i)
        u.push_back({x[i], dx.empty() ? 0.0 : dx[i]});
    std::vector<double> values;
    if (bank.mode() == encoding::BankMode::directional) {
        values = encoding::encode_directional_interval(u, bank);
    } else {
        for (const auto& s : u) {
            auto e = encoding::encode_interval(s, bank);
            values.insert(values.end(), e.begin(), e.end());
        }
    }
    return {{"command", "encode"},
            {"x", x},
            {"dx", dx},
            {"bank", cfg::detail::bank_json(bc)},
            {"width", values.size()},
            {"values", values}};
}

// ---- entry point ------------------------------------------------------------

inline int report_error(std::ostream& err, const char* kind, const std::string& message, int code)
{
    err << json{{"error", {{"kind", kind}, {"message", message}, {"exit_code", code}}}}.dump() << "\n";
    return code;
}

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr)
{
    CLI::App app{"gpna: geospatial tokenizer, latent backbone and task heads"};
    app.require_subcommand(1);
    std::string config, data_dir, out_dir, sample_id, checkpoint, split = "test", eval_out, predictions, counts, bank_config, xs, dxs;
    std::optional<std::size_t> max_pad;
    std::optional<double> tolerance;

    auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
    synth->add_option("--config", config, "run config (JSON)")->required();
    synth->add_option("--out", out_dir, "output dataset directory")->required();

    auto* tokenize = app.add_subcommand("tokenize", "dump the token matrix of one sample");
    tokenize->add_option("--config", config, "run config (JSON)")->required();
    tokenize->add_option("--data", data_dir, "dataset directory")->required();
    tokenize->add_option("--sample-id", sample_id, "sample id")->required();

    auto* plan = app.add_subcommand("plan-batches", "cluster samples by token count");
    plan->add_option("--config", config, "run config (JSON)");
    plan->add_option("--data", data_dir, "dataset directory");
    plan->add_option("--counts", counts, "comma-separated token counts instead of a dataset");
    plan->add_option("--max-pad", max_pad, "padding budget (overrides planner.max_pad)");

    auto* trn = app.add_subcommand("train", "train from scratch on the training split");
    trn->add_option("--config", config, "run config (JSON)")->required();
    trn->add_option("--data", data_dir, "dataset directory")->required();
    trn->add_option("--out", out_dir, "output directory")->required();

    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
    ev->add_option("--config", config, "run config (JSON)")->required();
    ev->add_option("--checkpoint", checkpoint, "checkpoint stem, file or training output directory")->required();
    ev->add_option("--data", data_dir, "dataset directory")->required();
    ev->add_option("--split", split, "train, test or all")->check(CLI::IsMember({"train", "test", "all"}));
    ev->add_option("--out", eval_out, "also write the results to this file");
    ev->add_option("--predictions", predictions, "write segmentation maps (PGM + JSON scores) to this directory");

    auto* gc = app.add_subcommand("grad-check", "compare reverse-mode gradients with finite differences");
    gc->add_option("--config", config, "run config (JSON)");
    gc->add_option("--tolerance", tolerance, "relative error bound");

    auto* enc = app.add_subcommand("encode", "print Fourier encodings");
    enc->add_option("--x", xs, "comma-separated coordinates")->required();
    enc->add_option("--dx", dxs, "comma-separated interval half-widths");
    enc->add_option("--bank-config", bank_config, "frequency bank JSON (file or inline)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        return report_error(err, "config", e.what(), config_error);
    }

    try {
        json result;
        if (synth->parsed()) {
            result = cmd_synth(cfg::load_run_config(config), out_dir);
        } else if (tokenize->parsed()) {
            result = cmd_tokenize(cfg::load_run_config(config), data_dir, sample_id);
        } else if (plan->parsed()) {
            const auto rc = config_or_default(config);
            std::vector<std::size_t> c;
            if (!counts.empty()) {
                c = parse_counts(counts);
            } else if (!data_dir.empty()) {
                const auto ds = data::load_dataset(data_dir);
                c = train::token_counts(ds.all());
            } else {
                throw ConfigError("plan-batches needs --data or --counts");
            }
            result = cmd_plan_batches(rc, c, max_pad);
        } else if (trn->parsed()) {
            result = cmd_train(cfg::load_run_config(config), data_dir, out_dir);
        } else if (ev->parsed()) {
            result = cmd_eval(cfg::load_run_config(config), checkpoint, data_dir, split, eval_out, predictions);
        } else if (gc->parsed()) {
            bool passed = false;
            result = cmd_grad_check(config_or_default(config), tolerance, passed);
            out << result.dump(2) << "\n";
            return passed ? ok : numeric_error;
        } else if (enc->parsed()) {
            result = cmd_encode(parse_reals(xs, "--x"), dxs.empty() ? std::vector<double>{} : parse_reals(dxs, "--dx"),
                                bank_config);
        }
        out << result.dump(2) << "\n";
        return ok;
    } catch (const ConfigError& e) {
        return report_error(err, "config", e.what(), config_error);
    } catch (const NumericError& e) {
        return report_error(err, "numeric", e.what(), numeric_error);
    } catch (const DataError& e) {
        return report_error(err, "data", e.what(), data_error);
    } catch (const InputError& e) {
        return report_error(err, "data", e.what(), data_error);
    } catch (const UndefinedMetricError& e) {
        return report_error(err, "numeric", e.what(), numeric_error);
    } catch (const fs::filesystem_error& e) {
        return report_error(err, "data", e.what(), data_error);
    }
}

}  // namespace gpna::cli
