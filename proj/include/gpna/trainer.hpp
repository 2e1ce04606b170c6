#pragma once
// Single-task training loop, evaluation and the end-to-end gradient check.

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <numeric>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "gpna/batch_planner.hpp"
#include "gpna/metrics.hpp"
#include "gpna/model.hpp"
#include "gpna/numerics/finite_diff.hpp"

namespace gpna::train {

using model::Model;
using num::Tape;
using num::Tensor;
using tok::GeoSample;

enum class OptimizerKind { sgd, adam };
enum class Schedule { constant, cosine };

inline OptimizerKind parse_optimizer(const std::string& s)
{
    if (s == "sgd")
        return OptimizerKind::sgd;
    if (s == "adam")
        return OptimizerKind::adam;
    throw ConfigError("unknown optimizer '" + s + "'");
}

inline Schedule parse_schedule(const std::string& s)
{
    if (s == "constant")
        return Schedule::constant;
    if (s == "cosine")
        return Schedule::cosine;
    throw ConfigError("unknown schedule '" + s + "'");
}

struct TrainConfig {
    std::size_t steps = 200;
    double lr = 1e-3;
    OptimizerKind optimizer = OptimizerKind::adam;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::uint64_t seed = 1;
    std::size_t batch_size = 16;  // clusters larger than this are cut into mini-batches
    double clip_norm = 0.0;       // 0 = no clipping
    Schedule schedule = Schedule::constant;
    std::size_t warmup_steps = 0;

    void validate() const
    {
        if (steps == 0)
            throw ConfigError("train: steps must be positive");
        if (!(lr >= 0.0))
            throw ConfigError("train: lr must be non-negative");
        if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0) || !(eps > 0.0))
            throw ConfigError("train: adam betas must lie in [0, 1) and eps must be positive");
        if (batch_size == 0)
            throw ConfigError("train: batch_size must be positive");
        if (!(clip_norm >= 0.0))
            throw ConfigError("train: clip_norm must be non-negative");
        if (warmup_steps >= steps && warmup_steps > 0)
            throw ConfigError("train: warmup_steps must be below steps");
    }

    /// Learning rate used at 0-based step `step`.
    double lr_at(std::size_t step) const
    {
        if (step < warmup_steps)
            return lr * static_cast<double>(step + 1) / static_cast<double>(warmup_steps);
        if (schedule == Schedule::cosine) {
            const double span = static_cast<double>(steps - warmup_steps);
            const double p = static_cast<double>(step - warmup_steps) / span;
            return 0.5 * lr * (1.0 + std::cos(3.14159265358979323846 * p));
        }
        return lr;
    }
};

class Optimizer {
public:
    Optimizer(num::ParamStore& store, const TrainConfig& config) : store_(&store), config_(config)
    {
        for (const auto& e : store.entries())
            if (e.trainable) {
                m_.emplace_back(e.tensor.size(), 0.0);
                v_.emplace_back(e.tensor.size(), 0.0);
            } else {
                m_.emplace_back();
                v_.emplace_back();
            }
    }

    /// Applies one update from the gradients currently stored on the parameters.
    void step(double lr)
    {
        ++t_;
        const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
        auto& entries = store_->entries();
        for (std::size_t k = 0; k < entries.size(); ++k) {
            if (!entries[k].trainable)
                continue;
            auto theta = entries[k].tensor.mutable_values();
            auto g = entries[k].tensor.grad();
            if (config_.optimizer == OptimizerKind::sgd) {
                for (std::size_t i = 0; i < theta.size(); ++i)
                    theta[i] -= lr * g[i];
                continue;
            }
            auto& m = m_[k];
            auto& v = v_[k];
            for (std::size_t i = 0; i < theta.size(); ++i) {
                m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g[i];
                v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g[i] * g[i];
                theta[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + config_.eps);
            }
        }
    }

private:
    num::ParamStore* store_;
    TrainConfig config_;
    std::vector<std::vector<double>> m_, v_;
    std::size_t t_ = 0;
};

/// Global L2 norm of the trainable gradients.
inline double grad_norm(const num::ParamStore& store)
{
    double s = 0.0;
    for (const auto& e : store.entries())
        if (e.trainable)
            for (double g : e.tensor.grad())
                s += g * g;
    return std::sqrt(s);
}

inline void scale_grads(num::ParamStore& store, double factor)
{
    for (auto& e : store.entries())
        if (e.trainable)
            for (double& g : e.tensor.mutable_grad())
                g *= factor;
}

/// Zeroes the gradients, runs forward and backward on one batch padded to
/// max(pad_to, longest), and returns the per-head losses followed by their sum.
inline std::vector<double> compute_gradients(Model& model, std::span<const GeoSample* const> batch,
                                             std::size_t pad_to = 0)
{
    model.params().zero_grad();
    Tape tape;
    const auto fr = model.forward(tape, batch, pad_to);
    const auto losses = model.head_losses(tape, fr, batch);
    tape.backward(losses.back());
    std::vector<double> out;
    for (const auto& l : losses)
        out.push_back(l.item());
    return out;
}

struct LossRecord {
    std::size_t step = 0;
    std::size_t batch_size = 0;
    std::vector<double> losses;  // per head, then total
};

struct TrainResult {
    std::vector<LossRecord> trace;
    plan::BatchPlan plan;
};

inline std::vector<std::size_t> token_counts(const std::vector<const GeoSample*>& samples)
{
    std::vector<std::size_t> counts;
    for (const auto* s : samples)
        counts.push_back(tok::token_count(*s->spec));
    return counts;
}

struct MiniBatch {
    std::vector<const GeoSample*> samples;
    std::size_t pad_to = 0;
};

/// One epoch of mini-batches: members of each cluster shuffled and cut into
/// batch_size chunks padded to the cluster length, then all chunks shuffled.
inline std::vector<MiniBatch> epoch_batches(const plan::BatchPlan& plan, const std::vector<const GeoSample*>& samples,
                                            std::size_t batch_size, Rng& rng)
{
    std::vector<MiniBatch> out;
    for (const auto& c : plan.clusters) {
        auto members = c.members;
        std::shuffle(members.begin(), members.end(), rng);
        for (std::size_t s = 0; s < members.size(); s += batch_size) {
            MiniBatch mb;
            mb.pad_to = c.target_len;
            for (std::size_t i = s; i < std::min(members.size(), s + batch_size); ++i)
                mb.samples.push_back(samples[members[i]]);
            out.push_back(std::move(mb));
        }
    }
    std::shuffle(out.begin(), out.end(), rng);
    return out;
}

/// Trains in place. The batch plan is computed once from the token counts.
/// Throws NumericError on a non-finite loss or gradient.
inline TrainResult train(Model& model, const std::vector<const GeoSample*>& samples, const TrainConfig& config,
                         const plan::PlannerConfig& planner = {})
{
    config.validate();
    if (samples.empty())
        throw InputError("train: no training samples");
    for (const auto* s : samples)
        model.add_modality(*s->spec);
    TrainResult result;
    result.plan = plan::plan_batches(token_counts(samples), planner);
    Optimizer opt(model.params(), config);
    Rng rng(config.seed);
    std::vector<MiniBatch> queue;
    std::size_t next = 0;
    for (std::size_t step = 0; step < config.steps; ++step) {
        if (next == queue.size()) {
            queue = epoch_batches(result.plan, samples, config.batch_size, rng);
            next = 0;
        }
        const auto& mb = queue[next++];
        auto losses = compute_gradients(model, mb.samples, mb.pad_to);
        for (std::size_t h = 0; h < losses.size(); ++h)
            if (!std::isfinite(losses[h]))
                throw NumericError("non-finite loss at step " + std::to_string(step) + " (" +
                                   (h + 1 < losses.size() ? "head '" + model.heads()[h]->spec().id + "'" : "total") +
                                   ")");
        const double norm = grad_norm(model.params());
        if (!std::isfinite(norm))
            throw NumericError("non-finite gradient at step " + std::to_string(step));
        if (config.clip_norm > 0.0 && norm > config.clip_norm)
            scale_grads(model.params(), config.clip_norm / norm);
        opt.step(config.lr_at(step));
        result.trace.push_back({step, mb.samples.size(), std::move(losses)});
    }
    return result;
}

inline void write_loss_csv(std::ostream& out, const Model& model, const std::vector<LossRecord>& trace)
{
    out << "step";
    for (const auto* h : model.heads())
        out << ',' << h->spec().id;
    out << ",total\n";
    out.precision(17);
    for (const auto& r : trace) {
        out << r.step;
        for (double l : r.losses)
            out << ',' << l;
        out << '\n';
    }
}

// ---- evaluation -----------------------------------------------------------

/// Raw head outputs for each sample, computed without recording gradients.
struct Predictions {
    std::map<std::string, std::vector<std::vector<double>>> outputs;  // head -> per sample flattened output
};

inline Predictions predict(const Model& model, const std::vector<const GeoSample*>& samples,
                           std::size_t batch_size = 16)
{
    Predictions p;
    for (std::size_t s = 0; s < samples.size(); s += batch_size) {
        std::vector<const GeoSample*> batch(samples.begin() + static_cast<std::ptrdiff_t>(s),
                                            samples.begin() +
                                                static_cast<std::ptrdiff_t>(std::min(samples.size(), s + batch_size)));
        Tape tape;
        tape.set_grad_enabled(false);
        const auto fr = model.forward(tape, batch);
        for (const auto& [id, out] : fr.outputs) {
            const std::size_t per = out.size() / batch.size();
            for (std::size_t b = 0; b < batch.size(); ++b)
                p.outputs[id].emplace_back(out.values().begin() + static_cast<std::ptrdiff_t>(b * per),
                                           out.values().begin() + static_cast<std::ptrdiff_t>((b + 1) * per));
        }
    }
    return p;
}

inline std::vector<int> argmax_rows(std::span<const double> v, std::size_t width)
{
    std::vector<int> out;
    for (std::size_t r = 0; r * width < v.size(); ++r) {
        const auto row = v.subspan(r * width, width);
        out.push_back(static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin()));
    }
    return out;
}

/// Metrics per head: accuracy (+ F1 for two classes), RMSE + R², DICE + pixel
/// accuracy. Segmentation scores pool all pixels of all samples.
inline std::vector<metrics::EvalResult> evaluate(const Model& model, const std::vector<const GeoSample*>& samples,
                                                 std::size_t batch_size = 16)
{
    if (samples.empty())
        throw InputError("evaluate: no samples");
    const auto pred = predict(model, samples, batch_size);
    const std::size_t n = samples.size();
    std::vector<metrics::EvalResult> out;
    for (const auto* head : model.heads()) {
        const auto& spec = head->spec();
        const auto& outs = pred.outputs.at(spec.id);
        switch (spec.kind) {
        case model::HeadKind::classification: {
            std::vector<int> p, t;
            for (std::size_t i = 0; i < n; ++i) {
                p.push_back(argmax_rows(outs[i], spec.classes).front());
                t.push_back(samples[i]->target.label);
            }
            out.push_back({spec.id, "accuracy", metrics::accuracy(p, t), n});
            if (spec.classes == 2)
                out.push_back({spec.id, "f1", metrics::f1(p, t), n});
            break;
        }
        case model::HeadKind::regression: {
            std::vector<double> p, t;
            for (std::size_t i = 0; i < n; ++i) {
                p.insert(p.end(), outs[i].begin(), outs[i].end());
                t.insert(t.end(), samples[i]->target.values.begin(), samples[i]->target.values.end());
            }
            out.push_back({spec.id, "rmse", metrics::rmse(p, t), n});
            try {
                out.push_back({spec.id, "r2", metrics::r_squared(p, t), n});
            } catch (const UndefinedMetricError&) {
                // constant targets: R² has no value, report RMSE only
            }
            break;
        }
        case model::HeadKind::segmentation: {
            std::vector<int> p, t;
            for (std::size_t i = 0; i < n; ++i) {
                auto labels = argmax_rows(outs[i], spec.classes);
                p.insert(p.end(), labels.begin(), labels.end());
                t.insert(t.end(), samples[i]->target.mask.begin(), samples[i]->target.mask.end());
            }
            const double d = spec.classes == 2 ? metrics::dice(p, t)
                                               : metrics::dice_multiclass(p, t, static_cast<int>(spec.classes));
            out.push_back({spec.id, "dice", d, n});
            out.push_back({spec.id, "pixel_accuracy", metrics::accuracy(p, t), n});
            break;
        }
        }
    }
    return out;
}

// ---- gradient check -------------------------------------------------------

struct GradCheckOptions {
    std::size_t coords_per_group = 200;
    double step = 1e-4;
    // Combine central differences at step and 2 * step as (4 D(h) - D(2h)) / 3,
    // cancelling the h^2 term. Without it no single step resolves both the
    // curvature-dominated and the tiny gradients of a full model to 1e-4.
    bool extrapolate = true;
    double tolerance = 1e-4;
    double floor = 1e-8;  // denominator floor of the relative error
    std::uint64_t seed = 3;
};

struct GroupReport {
    std::string group;
    std::size_t n_coords = 0;
    double worst = 0.0;
    std::string worst_param;
    std::size_t worst_index = 0;
    double analytic = 0.0, numeric = 0.0;  // at the worst coordinate
};

struct GradCheckReport {
    bool passed = false;
    double worst = 0.0;
    std::size_t n_coords = 0;
    std::vector<GroupReport> groups;
};

/// Group of a parameter name: "tokenizer.band.<label>", otherwise the first two
/// dot-separated components ("backbone.self0", "head.<id>", ...).
inline std::string param_group(const std::string& name)
{
    const std::size_t parts = name.rfind("tokenizer.band.", 0) == 0 ? 3 : 2;
    std::size_t pos = 0;
    for (std::size_t k = 0; k < parts; ++k) {
        pos = name.find('.', pos);
        if (pos == std::string::npos)
            return name;
        if (k + 1 < parts)
            ++pos;
    }
    return name.substr(0, pos);
}

/// Compares the reverse-mode gradient of `loss` against central differences on
/// up to coords_per_group random coordinates of every trainable group.
/// `loss` must rebuild the scalar from the current parameter values.
inline GradCheckReport grad_check(const std::function<Tensor(Tape&)>& loss, num::ParamStore& store,
                                  const GradCheckOptions& options = {})
{
    if (!(options.step > 0.0) || options.coords_per_group == 0)
        throw ConfigError("grad_check: step and coords_per_group must be positive");
    store.zero_grad();
    {
        Tape tape;
        tape.backward(loss(tape));
    }
    auto evaluate_loss = [&] {
        Tape tape;
        tape.set_grad_enabled(false);
        return loss(tape).item();
    };

    // (entry index, element index) per group, in registration order
    std::map<std::string, std::vector<std::pair<std::size_t, std::size_t>>> coords;
    std::vector<std::string> order;
    auto& entries = store.entries();
    for (std::size_t k = 0; k < entries.size(); ++k) {
        if (!entries[k].trainable)
            continue;
        const auto g = param_group(entries[k].name);
        if (!coords.contains(g))
            order.push_back(g);
        for (std::size_t i = 0; i < entries[k].tensor.size(); ++i)
            coords[g].emplace_back(k, i);
    }
    Rng rng(options.seed);
    GradCheckReport report;
    report.passed = true;
    for (const auto& g : order) {
        auto& all = coords[g];
        std::vector<std::pair<std::size_t, std::size_t>> picked;
        if (all.size() <= options.coords_per_group)
            picked = all;
        else
            std::sample(all.begin(), all.end(), std::back_inserter(picked), options.coords_per_group, rng);
        GroupReport gr;
        gr.group = g;
        gr.n_coords = picked.size();
        for (auto [k, i] : picked) {
            auto values = entries[k].tensor.mutable_values();
            const double orig = values[i];
            auto central = [&](double h) {
                values[i] = orig + h;
                const double fp = evaluate_loss();
                values[i] = orig - h;
                const double fm = evaluate_loss();
                values[i] = orig;
                return (fp - fm) / (2.0 * h);
            };
            const double d1 = central(options.step);
            const double numeric = options.extrapolate ? (4.0 * d1 - central(2.0 * options.step)) / 3.0 : d1;
            const double analytic = entries[k].tensor.grad()[i];
            const double err = num::relative_error(analytic, numeric, options.floor);
            // NaN counts as worse than anything and sticks
            if (gr.worst_param.empty() || (!std::isnan(gr.worst) && !(err <= gr.worst))) {
                gr.worst = err;
                gr.worst_param = entries[k].name;
                gr.worst_index = i;
                gr.analytic = analytic;
                gr.numeric = numeric;
            }
        }
        report.n_coords += gr.n_coords;
        if (!std::isnan(report.worst) && !(gr.worst <= report.worst))
            report.worst = gr.worst;
        if (!(gr.worst < options.tolerance))
            report.passed = false;
        report.groups.push_back(std::move(gr));
    }
    return report;
}

}  // namespace gpna::train
