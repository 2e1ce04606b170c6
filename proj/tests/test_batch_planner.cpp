#include <gtest/gtest.h>

#include <algorithm>
#include <functional>
#include <random>
#include <set>

#include "gpna/batch_planner.hpp"

using namespace gpna;
using namespace gpna::plan;

namespace {

using Cost = std::pair<std::size_t, std::size_t>;  // (clusters, waste)

// Every set partition of the indices, enumerated by restricted growth strings.
void for_each_partition(std::size_t n, const std::function<void(const std::vector<std::vector<std::size_t>>&)>& fn)
{
    std::vector<std::size_t> block(n, 0);
    std::function<void(std::size_t, std::size_t)> rec = [&](std::size_t i, std::size_t used) {
        if (i == n) {
            std::vector<std::vector<std::size_t>> parts(used);
            for (std::size_t k = 0; k < n; ++k)
                parts[block[k]].push_back(k);
            fn(parts);
            return;
        }
        for (std::size_t b = 0; b <= used; ++b) {
            block[i] = b;
            rec(i + 1, std::max(used, b + 1));
        }
    };
    rec(0, 0);
}

// Lexicographically best (clusters, waste) over all budget-respecting partitions.
Cost brute_force_optimum(const std::vector<std::size_t>& counts, std::size_t max_pad, std::size_t* n_partitions = nullptr)
{
    Cost best{SIZE_MAX, SIZE_MAX};
    std::size_t seen = 0;
    for_each_partition(counts.size(), [&](const auto& parts) {
        ++seen;
        std::size_t waste = 0;
        for (const auto& p : parts) {
            std::size_t lo = SIZE_MAX, hi = 0;
            for (auto i : p) {
                lo = std::min(lo, counts[i]);
                hi = std::max(hi, counts[i]);
            }
            if (hi - lo > max_pad)
                return;
            for (auto i : p)
                waste += hi - counts[i];
        }
        best = std::min(best, Cost{parts.size(), waste});
    });
    if (n_partitions)
        *n_partitions = seen;
    return best;
}

// Textbook DBSCAN with quadratic neighbourhood queries.
std::vector<int> naive_dbscan(const std::vector<std::size_t>& counts, double eps, std::size_t min_pts)
{
    const std::size_t n = counts.size();
    auto neighbours = [&](std::size_t i) {
        std::vector<std::size_t> out;
        for (std::size_t j = 0; j < n; ++j)
            if (std::abs(static_cast<double>(counts[i]) - static_cast<double>(counts[j])) <= eps)
                out.push_back(j);
        return out;
    };
    std::vector<int> label(n, -2);
    int next = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (label[i] != -2)
            continue;
        auto nb = neighbours(i);
        if (nb.size() < min_pts) {
            label[i] = -1;
            continue;
        }
        const int id = next++;
        label[i] = id;
        std::vector<std::size_t> queue(nb.begin(), nb.end());
        for (std::size_t q = 0; q < queue.size(); ++q) {
            const auto j = queue[q];
            if (label[j] == -1)
                label[j] = id;
            if (label[j] != -2)
                continue;
            label[j] = id;
            auto nj = neighbours(j);
            if (nj.size() >= min_pts)
                queue.insert(queue.end(), nj.begin(), nj.end());
        }
    }
    return label;
}

std::set<std::set<std::size_t>> as_sets(const BatchPlan& plan)
{
    std::set<std::set<std::size_t>> out;
    for (const auto& c : plan.clusters)
        out.insert({c.members.begin(), c.members.end()});
    return out;
}

std::vector<std::size_t> random_counts(std::mt19937_64& rng, std::size_t n, std::size_t hi)
{
    std::uniform_int_distribution<std::size_t> u(0, hi);
    std::vector<std::size_t> c(n);
    for (auto& v : c)
        v = u(rng);
    return c;
}

void expect_partition(const BatchPlan& plan, std::size_t n)
{
    std::vector<int> seen(n, 0);
    for (const auto& c : plan.clusters)
        for (auto i : c.members) {
            ASSERT_LT(i, n);
            ++seen[i];
        }
    for (std::size_t i = 0; i < n; ++i)
        EXPECT_EQ(seen[i], 1) << "sample " << i;
}

std::size_t max_range(const BatchPlan& plan, const std::vector<std::size_t>& counts)
{
    std::size_t worst = 0;
    for (const auto& c : plan.clusters) {
        std::size_t lo = SIZE_MAX, hi = 0;
        for (auto i : c.members) {
            lo = std::min(lo, counts[i]);
            hi = std::max(hi, counts[i]);
        }
        worst = std::max(worst, hi - lo);
    }
    return worst;
}

}  // namespace

TEST(Dbscan, Examples)
{
    EXPECT_EQ(dbscan_1d({100, 150}, 50, 1), (std::vector<int>{0, 0}));
    EXPECT_EQ(dbscan_1d({100, 4000}, 500, 1), (std::vector<int>{0, 1}));
    EXPECT_EQ(dbscan_1d({10, 12, 14, 100}, 5, 1), (std::vector<int>{0, 0, 0, 1}));
}

TEST(Dbscan, LowestIndexSeedsFirst)
{
    EXPECT_EQ(dbscan_1d({900, 5, 910, 7}, 20, 1), (std::vector<int>{0, 1, 0, 1}));
}

TEST(Dbscan, NoiseOnlyWithLargerMinPts)
{
    EXPECT_EQ(dbscan_1d({1, 2, 3, 100}, 1, 3), (std::vector<int>{0, 0, 0, kNoise}));
    EXPECT_THROW(dbscan_1d({}, 1, 1), InputError);
    EXPECT_THROW(dbscan_1d({1}, 1, 0), ConfigError);
}

TEST(Dbscan, MatchesNaiveImplementation)
{
    std::mt19937_64 rng(21);
    for (int trial = 0; trial < 400; ++trial) {
        const auto counts = random_counts(rng, 1 + trial % 40, 200);
        const double eps = static_cast<double>(trial % 17);
        const std::size_t min_pts = 1 + trial % 4;
        EXPECT_EQ(dbscan_1d(counts, eps, min_pts), naive_dbscan(counts, eps, min_pts));
    }
}

TEST(Dbscan, ClusterCountNonIncreasingInEps)
{
    std::mt19937_64 rng(22);
    for (int trial = 0; trial < 100; ++trial) {
        const auto counts = random_counts(rng, 30, 500);
        std::size_t prev = SIZE_MAX;
        for (std::size_t eps = 0; eps <= 100; ++eps) {
            const auto labels = dbscan_1d(counts, static_cast<double>(eps), 1);
            const auto k = static_cast<std::size_t>(*std::max_element(labels.begin(), labels.end()) + 1);
            EXPECT_LE(k, prev);
            prev = k;
        }
    }
}

TEST(PlanBatches, Examples)
{
    const std::vector<std::size_t> counts{100, 150, 4000};
    const auto plan = plan_batches(counts, {.max_pad = 60});
    ASSERT_EQ(plan.clusters.size(), 2u);
    EXPECT_EQ(plan.clusters[0].members, (std::vector<std::size_t>{0, 1}));
    EXPECT_EQ(plan.clusters[0].waste, 50u);
    EXPECT_EQ(plan.clusters[1].members, (std::vector<std::size_t>{2}));
    EXPECT_EQ(plan.clusters[1].waste, 0u);

    // Exhaustive oracle over the 5 partitions of 3 elements.
    std::size_t n_partitions = 0;
    EXPECT_EQ(brute_force_optimum(counts, 60, &n_partitions), (Cost{2, 50}));
    EXPECT_EQ(n_partitions, 5u);

    const auto equal = plan_batches({7, 7, 7, 7}, {.max_pad = 0});
    EXPECT_EQ(equal.clusters.size(), 1u);
    EXPECT_EQ(equal.total_waste, 0u);

    const auto zero = plan_batches({3, 9, 3, 4, 9}, {.max_pad = 0});
    EXPECT_EQ(zero.clusters.size(), 3u);
    EXPECT_EQ(zero.total_waste, 0u);
}

TEST(PlanBatches, SmallBudgetSeparatesLongSample)
{
    const std::vector<std::size_t> counts{100, 4000};
    const auto merged = plan_batches(counts, {.max_pad = 4000});
    const auto split = plan_batches(counts, {.max_pad = 500});
    EXPECT_EQ(merged.clusters.size(), 1u);
    EXPECT_EQ(merged.total_waste, 3900u);
    EXPECT_EQ(split.clusters.size(), 2u);
    EXPECT_EQ(merged.total_waste - split.total_waste, 3900u);
}

TEST(PlanBatches, ChainIsSplitToRespectBudget)
{
    // One DBSCAN chain spanning 40 with eps 10.
    const std::vector<std::size_t> counts{0, 10, 20, 30, 40};
    EXPECT_EQ(plan_batches(counts, {.max_pad = 10, .enforce_budget = false}).clusters.size(), 1u);
    for (auto rule : {SplitRule::least_waste, SplitRule::greedy}) {
        const auto plan = plan_batches(counts, {.max_pad = 10, .split = rule});
        EXPECT_LE(max_range(plan, counts), 10u);
        EXPECT_EQ(plan.clusters.size(), 3u);
    }
}

TEST(PlanBatches, MaxClusterSizeChunks)
{
    std::vector<std::size_t> counts(10, 5);
    counts[3] = 6;
    const auto plan = plan_batches(counts, {.max_pad = 2, .max_cluster_size = 4});
    EXPECT_EQ(plan.clusters.size(), 3u);
    for (const auto& c : plan.clusters)
        EXPECT_LE(c.members.size(), 4u);
    expect_partition(plan, counts.size());
}

TEST(PlanBatches, RandomInstancesRespectBudgetAndOracleBound)
{
    std::mt19937_64 rng(2024);
    double greedy_worst_ratio = 1.0;
    for (int trial = 0; trial < 500; ++trial) {
        const std::size_t n = 1 + trial % 50;
        const auto counts = random_counts(rng, n, 1 + rng() % 3000);
        const std::size_t max_pad = rng() % 400;
        const auto oracle = optimal_partition_oracle(counts, max_pad);
        const auto plan = plan_batches(counts, {.max_pad = max_pad});
        const auto greedy = plan_batches(counts, {.max_pad = max_pad, .split = SplitRule::greedy});
        expect_partition(plan, n);
        expect_partition(greedy, n);
        EXPECT_LE(max_range(plan, counts), max_pad);
        EXPECT_LE(max_range(greedy, counts), max_pad);
        EXPECT_GE(plan.total_waste, oracle.total_waste);
        EXPECT_LE(plan.total_waste, 2 * oracle.total_waste);
        EXPECT_EQ(plan.clusters.size(), oracle.clusters.size());
        EXPECT_EQ(greedy.clusters.size(), oracle.clusters.size());
        EXPECT_GE(greedy.total_waste, oracle.total_waste);
        if (oracle.total_waste > 0)
            greedy_worst_ratio = std::max(greedy_worst_ratio, static_cast<double>(greedy.total_waste) /
                                                                   static_cast<double>(oracle.total_waste));
    }
    RecordProperty("greedy_worst_waste_ratio", std::to_string(greedy_worst_ratio));
    std::cout << "greedy split worst waste / oracle waste: " << greedy_worst_ratio << "\n";
}

TEST(Oracle, Examples)
{
    const auto a = optimal_partition_oracle({100, 150}, 50);
    EXPECT_EQ(a.total_waste, 50u);
    EXPECT_EQ(a.clusters.size(), 1u);

    const auto b = optimal_partition_oracle({1, 2, 3}, 1);
    EXPECT_EQ(b.total_waste, 1u);
    EXPECT_EQ(b.clusters.size(), 2u);
    const auto sets = as_sets(b);
    const std::set<std::set<std::size_t>> left{{0, 1}, {2}}, right{{0}, {1, 2}};
    EXPECT_TRUE(sets == left || sets == right);
    std::size_t n_partitions = 0;
    EXPECT_EQ(brute_force_optimum({1, 2, 3}, 1, &n_partitions), (Cost{2, 1}));
    EXPECT_EQ(n_partitions, 5u);

    std::mt19937_64 rng(5);
    for (int i = 0; i < 50; ++i) {
        const auto counts = random_counts(rng, 1 + i % 20, 300);
        const auto [lo, hi] = std::minmax_element(counts.begin(), counts.end());
        EXPECT_EQ(optimal_partition_oracle(counts, *hi - *lo + i % 3).clusters.size(), 1u);
    }
}

TEST(Oracle, ContiguousOptimumMatchesAllPartitions)
{
    std::mt19937_64 rng(77);
    for (int trial = 0; trial < 300; ++trial) {
        const std::size_t n = 1 + trial % 8;
        const auto counts = random_counts(rng, n, 40);
        const std::size_t max_pad = rng() % 25;
        const auto oracle = optimal_partition_oracle(counts, max_pad);
        EXPECT_EQ((Cost{oracle.clusters.size(), oracle.total_waste}), brute_force_optimum(counts, max_pad));
    }
}

TEST(WasteReport, Examples)
{
    const auto single = plan_batches({42}, {.max_pad = 10});
    const auto r1 = waste_report(single, {42});
    EXPECT_EQ(r1.total_waste, 0u);
    EXPECT_EQ(r1.padding_ratio, 0.0);
    EXPECT_EQ(r1.batch_count, 1u);

    const auto plan = plan_batches({100, 150}, {.max_pad = 50});
    const auto r2 = waste_report(plan, {100, 150});
    EXPECT_EQ(r2.total_waste, 50u);
    EXPECT_DOUBLE_EQ(r2.padding_ratio, 50.0 / 300.0);
    EXPECT_EQ(r2.cluster_target_len, (std::vector<std::size_t>{150}));
    EXPECT_EQ(r2.cluster_size, (std::vector<std::size_t>{2}));
    EXPECT_EQ(r2.padding_ratio, plan.padding_ratio);
}

TEST(WasteReport, InconsistentPlansRejected)
{
    const std::vector<std::size_t> counts{5, 8, 9};
    BatchPlan dup{{{{0, 1}, 8, 3}, {{1, 2}, 9, 1}}, 0, 0.0};
    BatchPlan missing{{{{0, 1}, 8, 3}}, 0, 0.0};
    BatchPlan short_target{{{{0, 1, 2}, 8, 0}}, 0, 0.0};
    BatchPlan out_of_range{{{{0, 1, 2, 3}, 9, 0}}, 0, 0.0};
    BatchPlan empty{{{{}, 0, 0}, {{0, 1, 2}, 9, 0}}, 0, 0.0};
    for (const auto* p : {&dup, &missing, &short_target, &out_of_range, &empty})
        EXPECT_THROW(waste_report(*p, counts), InputError);
}

TEST(WasteReport, RatioNonIncreasingAsBudgetShrinksWithoutPostSplit)
{
    // DBSCAN clusters only refine as eps shrinks, so waste (and the ratio
    // waste / (waste + sum of counts)) can only fall.
    std::mt19937_64 rng(31);
    for (int trial = 0; trial < 200; ++trial) {
        const auto counts = random_counts(rng, 2 + trial % 12, 60);
        double prev = 1.0;
        for (std::size_t max_pad = 61; max_pad-- > 0;) {
            const auto plan = plan_batches(counts, {.max_pad = max_pad, .enforce_budget = false});
            const auto r = waste_report(plan, counts);
            EXPECT_LE(r.padding_ratio, prev) << "max_pad " << max_pad;
            prev = r.padding_ratio;
        }
        EXPECT_EQ(prev, 0.0);
    }
}

TEST(WasteReport, BudgetPostSplitCanRaiseRatioWhenBudgetShrinks)
{
    // The post-split uses as few clusters as the budget allows, so a smaller
    // budget can move the cut points and pad more. Found by a random sweep.
    const std::vector<std::size_t> counts{31, 42, 25, 51, 14, 7, 32, 2, 58};
    const auto at30 = waste_report(plan_batches(counts, {.max_pad = 30}), counts);
    const auto at29 = waste_report(plan_batches(counts, {.max_pad = 29}), counts);
    EXPECT_GT(at29.padding_ratio, at30.padding_ratio);
    EXPECT_NEAR(at30.padding_ratio, 0.28415300546448086, 1e-15);
    EXPECT_NEAR(at29.padding_ratio, 0.32299741602067183, 1e-15);
}
