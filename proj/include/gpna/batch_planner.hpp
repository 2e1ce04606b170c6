#pragma once
// Groups samples by token count so each batch is padded only to the length of
// its own longest member. Clustering is DBSCAN on the real line with the
// padding budget as radius; an optional post-split makes the budget a hard
// per-cluster bound (DBSCAN chains can otherwise span more than eps).
//
// The post-split always uses the fewest clusters possible for the chain. With
// SplitRule::least_waste the cut points are chosen by dynamic programming;
// SplitRule::greedy closes a cluster as soon as the next count is out of range,
// which can pad several times more than necessary.

#include <algorithm>
#include <cstddef>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "gpna/error.hpp"

namespace gpna::plan {

enum class SplitRule { least_waste, greedy };

struct PlannerConfig {
    std::size_t max_pad = 0;           // padding tokens allowed per sample within a cluster
    std::size_t min_pts = 1;
    bool enforce_budget = true;
    SplitRule split = SplitRule::least_waste;
    std::size_t max_cluster_size = 0;  // 0 = unlimited
};

struct Cluster {
    std::vector<std::size_t> members;  // sample indices, ascending
    std::size_t target_len = 0;        // longest member
    std::size_t waste = 0;             // sum of (target_len - count)
};

struct BatchPlan {
    std::vector<Cluster> clusters;
    std::size_t total_waste = 0;
    double padding_ratio = 0.0;  // total_waste / sum(target_len * |cluster|)
};

inline constexpr int kNoise = -1;

/// DBSCAN on scalar counts (|a - b| <= eps are neighbours; a point counts
/// itself). Clusters are numbered in order of their lowest-index seed.
inline std::vector<int> dbscan_1d(const std::vector<std::size_t>& counts, double eps, std::size_t min_pts)
{
    if (counts.empty())
        throw InputError("dbscan_1d: no counts");
    if (min_pts == 0)
        throw ConfigError("dbscan_1d: min_pts must be positive");
    const std::size_t n = counts.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return counts[a] < counts[b]; });

    // Neighbourhood of point i is the sorted range [lo[i], hi[i]).
    std::vector<std::size_t> lo(n), hi(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double c = static_cast<double>(counts[i]);
        auto first = std::lower_bound(order.begin(), order.end(), c - eps,
                                      [&](std::size_t idx, double v) { return static_cast<double>(counts[idx]) < v; });
        auto last = std::upper_bound(order.begin(), order.end(), c + eps,
                                     [&](double v, std::size_t idx) { return v < static_cast<double>(counts[idx]); });
        lo[i] = static_cast<std::size_t>(first - order.begin());
        hi[i] = static_cast<std::size_t>(last - order.begin());
    }
    auto is_core = [&](std::size_t i) { return hi[i] - lo[i] >= min_pts; };

    constexpr int unvisited = -2;
    std::vector<int> label(n, unvisited);
    int next = 0;
    for (std::size_t seed = 0; seed < n; ++seed) {
        if (label[seed] != unvisited)
            continue;
        if (!is_core(seed)) {
            label[seed] = kNoise;
            continue;
        }
        const int id = next++;
        label[seed] = id;
        std::vector<std::size_t> frontier{seed};
        while (!frontier.empty()) {
            const std::size_t p = frontier.back();
            frontier.pop_back();
            if (!is_core(p))
                continue;
            for (std::size_t r = lo[p]; r < hi[p]; ++r) {
                const std::size_t q = order[r];
                if (label[q] == unvisited || label[q] == kNoise) {
                    const bool expand = label[q] == unvisited;
                    label[q] = id;
                    if (expand)
                        frontier.push_back(q);
                }
            }
        }
    }
    return label;
}

inline void finalize(BatchPlan& plan, const std::vector<std::size_t>& counts)
{
    plan.total_waste = 0;
    std::size_t padded = 0;
    for (auto& c : plan.clusters) {
        std::sort(c.members.begin(), c.members.end());
        c.target_len = 0;
        for (auto i : c.members)
            c.target_len = std::max(c.target_len, counts[i]);
        c.waste = 0;
        for (auto i : c.members)
            c.waste += c.target_len - counts[i];
        plan.total_waste += c.waste;
        padded += c.target_len * c.members.size();
    }
    plan.padding_ratio = padded ? static_cast<double>(plan.total_waste) / static_cast<double>(padded) : 0.0;
}

namespace detail {

/// Cut points [0 = c_0 < c_1 < ... < c_m = n] over sorted values s: every run
/// has range <= max_pad, m is minimal and, among those, total waste is minimal.
inline std::vector<std::size_t> least_waste_cuts(const std::vector<std::size_t>& s, std::size_t max_pad)
{
    const std::size_t n = s.size();
    std::vector<std::size_t> prefix(n + 1, 0);
    for (std::size_t i = 0; i < n; ++i)
        prefix[i + 1] = prefix[i] + s[i];
    using Cost = std::pair<std::size_t, std::size_t>;  // (clusters, waste), compared lexicographically
    constexpr auto inf = std::numeric_limits<std::size_t>::max();
    std::vector<Cost> best(n + 1, {inf, inf});
    std::vector<std::size_t> from(n + 1, 0);
    best[0] = {0, 0};
    for (std::size_t i = 1; i <= n; ++i)
        for (std::size_t j = i; j-- > 0;) {
            if (s[i - 1] - s[j] > max_pad)
                break;
            const std::size_t waste = s[i - 1] * (i - j) - (prefix[i] - prefix[j]);
            const Cost c{best[j].first + 1, best[j].second + waste};
            if (c < best[i]) {
                best[i] = c;
                from[i] = j;
            }
        }
    std::vector<std::size_t> cuts{n};
    for (std::size_t i = n; i > 0; i = from[i])
        cuts.push_back(from[i]);
    std::reverse(cuts.begin(), cuts.end());
    return cuts;
}

inline std::vector<std::size_t> sorted_by_count(std::vector<std::size_t> idx, const std::vector<std::size_t>& counts)
{
    std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return counts[a] < counts[b]; });
    return idx;
}

}  // namespace detail

/// Splits members into runs of the sorted counts whose range stays within max_pad.
inline std::vector<std::vector<std::size_t>> split_by_budget(const std::vector<std::size_t>& members,
                                                             const std::vector<std::size_t>& counts,
                                                             std::size_t max_pad, SplitRule rule)
{
    const auto sorted = detail::sorted_by_count(members, counts);
    std::vector<std::vector<std::size_t>> out;
    if (rule == SplitRule::greedy) {
        for (auto i : sorted) {
            if (out.empty() || counts[i] - counts[out.back().front()] > max_pad)
                out.emplace_back();
            out.back().push_back(i);
        }
        return out;
    }
    std::vector<std::size_t> s;
    for (auto i : sorted)
        s.push_back(counts[i]);
    const auto cuts = detail::least_waste_cuts(s, max_pad);
    for (std::size_t k = 0; k + 1 < cuts.size(); ++k)
        out.emplace_back(sorted.begin() + static_cast<std::ptrdiff_t>(cuts[k]),
                         sorted.begin() + static_cast<std::ptrdiff_t>(cuts[k + 1]));
    return out;
}

inline BatchPlan plan_batches(const std::vector<std::size_t>& counts, const PlannerConfig& config)
{
    const auto labels = dbscan_1d(counts, static_cast<double>(config.max_pad), config.min_pts);
    const int n_clusters = labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end()) + 1;
    std::vector<std::vector<std::size_t>> groups(static_cast<std::size_t>(std::max(n_clusters, 0)));
    std::vector<std::vector<std::size_t>> noise;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] == kNoise)
            noise.push_back({i});  // every sample is batched, noise as singletons
        else
            groups[static_cast<std::size_t>(labels[i])].push_back(i);
    }
    groups.insert(groups.end(), noise.begin(), noise.end());

    BatchPlan plan;
    for (auto& g : groups) {
        std::vector<std::vector<std::size_t>> parts;
        auto [mn, mx] = std::minmax_element(g.begin(), g.end(), [&](auto a, auto b) { return counts[a] < counts[b]; });
        if (config.enforce_budget && counts[*mx] - counts[*mn] > config.max_pad)
            parts = split_by_budget(g, counts, config.max_pad, config.split);
        else
            parts.push_back(g);
        for (auto& p : parts) {
            if (config.max_cluster_size == 0 || p.size() <= config.max_cluster_size) {
                plan.clusters.push_back({std::move(p), 0, 0});
                continue;
            }
            p = detail::sorted_by_count(std::move(p), counts);
            for (std::size_t s = 0; s < p.size(); s += config.max_cluster_size) {
                const auto e = std::min(p.size(), s + config.max_cluster_size);
                plan.clusters.push_back({{p.begin() + static_cast<std::ptrdiff_t>(s),
                                          p.begin() + static_cast<std::ptrdiff_t>(e)},
                                         0,
                                         0});
            }
        }
    }
    finalize(plan, counts);
    return plan;
}

/// Reference partition: contiguous runs of the sorted counts, each with range
/// <= max_pad, using as few clusters as possible and, among those, the least
/// total waste. O(n^2) dynamic program.
inline BatchPlan optimal_partition_oracle(const std::vector<std::size_t>& counts, std::size_t max_pad)
{
    if (counts.empty())
        throw InputError("optimal_partition_oracle: no counts");
    const std::size_t n = counts.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return counts[a] < counts[b]; });
    // best[i]: (clusters, waste) for the first i sorted counts
    std::vector<std::pair<std::size_t, std::size_t>> best(n + 1);
    std::vector<std::size_t> cut(n + 1, 0);
    for (std::size_t i = 1; i <= n; ++i) {
        bool found = false;
        std::size_t waste = 0;
        const std::size_t top = counts[order[i - 1]];
        for (std::size_t j = i; j-- > 0;) {
            if (top - counts[order[j]] > max_pad)
                break;
            waste += top - counts[order[j]];
            const std::pair<std::size_t, std::size_t> c{best[j].first + 1, best[j].second + waste};
            if (!found || c < best[i]) {
                best[i] = c;
                cut[i] = j;
                found = true;
            }
        }
    }
    BatchPlan plan;
    for (std::size_t i = n; i > 0; i = cut[i]) {
        Cluster c;
        for (std::size_t r = cut[i]; r < i; ++r)
            c.members.push_back(order[r]);
        plan.clusters.push_back(std::move(c));
    }
    std::reverse(plan.clusters.begin(), plan.clusters.end());
    finalize(plan, counts);
    return plan;
}

struct WasteReport {
    std::vector<std::size_t> cluster_waste;
    std::vector<std::size_t> cluster_target_len;
    std::vector<std::size_t> cluster_size;
    std::size_t total_waste = 0;
    double padding_ratio = 0.0;
    std::size_t batch_count = 0;
};

/// Recomputes waste from the counts and checks the plan against them.
inline WasteReport waste_report(const BatchPlan& plan, const std::vector<std::size_t>& counts)
{
    std::vector<int> seen(counts.size(), 0);
    WasteReport r;
    std::size_t padded = 0;
    for (const auto& c : plan.clusters) {
        if (c.members.empty())
            throw InputError("waste_report: empty cluster");
        std::size_t waste = 0;
        for (auto i : c.members) {
            if (i >= counts.size())
                throw InputError("waste_report: member index " + std::to_string(i) + " out of range");
            if (counts[i] > c.target_len)
                throw InputError("waste_report: target length " + std::to_string(c.target_len) +
                                 " below member count " + std::to_string(counts[i]));
            ++seen[i];
            waste += c.target_len - counts[i];
        }
        r.cluster_waste.push_back(waste);
        r.cluster_target_len.push_back(c.target_len);
        r.cluster_size.push_back(c.members.size());
        r.total_waste += waste;
        padded += c.target_len * c.members.size();
    }
    for (auto v : seen)
        if (v != 1)
            throw InputError("waste_report: clusters do not partition the samples");
    r.padding_ratio = padded ? static_cast<double>(r.total_waste) / static_cast<double>(padded) : 0.0;
    r.batch_count = plan.clusters.size();
    return r;
}

}  // namespace gpna::plan
