#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <filesystem>
#include <fstream>

#include "gpna/dataset.hpp"
#include "gpna/datasynth.hpp"
#include "gpna/metrics.hpp"

using namespace gpna;
using namespace gpna::synth;
namespace fs = std::filesystem;

namespace {

tok::ModalitySpec modality(std::size_t n_bands, std::size_t side, std::size_t timesteps = 1)
{
    tok::ModalitySpec m;
    m.modality_id = "synthetic";
    for (std::size_t l = 0; l < n_bands; ++l)
        m.bands.push_back({tok::BandKind::optical, "B" + std::to_string(l), 16});
    m.height = side;
    m.width = side;
    m.timesteps = timesteps;
    return m;
}

SynthSpec spec_for(TaskKind task, std::size_t n_bands, std::size_t side, std::size_t timesteps, std::size_t n)
{
    SynthSpec s;
    s.task = task;
    s.modality = modality(n_bands, side, timesteps);
    s.n_samples = n;
    return s;
}

std::vector<double> band_means(const tok::GeoSample& s)
{
    std::vector<double> f;
    for (std::size_t t = 0; t < s.spec->timesteps; ++t)
        for (std::size_t l = 0; l < s.spec->n_bands(); ++l)
            f.push_back(detail::band_mean(s, t, l));
    return f;
}

double accuracy_of_threshold(const data::Dataset& ds, double threshold)
{
    std::size_t hits = 0;
    for (const auto& s : ds.samples)
        hits += (detail::band_mean(s, 0, 0) > threshold) == (s.target.label == 1);
    return static_cast<double>(hits) / static_cast<double>(ds.samples.size());
}

void expect_same_dataset(const data::Dataset& a, const data::Dataset& b)
{
    ASSERT_EQ(a.samples.size(), b.samples.size());
    EXPECT_EQ(a.task, b.task);
    EXPECT_EQ(a.splits, b.splits);
    EXPECT_EQ(a.planted, b.planted);
    EXPECT_TRUE(*a.modalities.front() == *b.modalities.front());
    for (std::size_t i = 0; i < a.samples.size(); ++i) {
        const auto &x = a.samples[i], &y = b.samples[i];
        EXPECT_EQ(x.id, y.id);
        EXPECT_EQ(x.values, y.values);
        EXPECT_EQ(x.lat.value, y.lat.value);
        EXPECT_EQ(x.lon.half_width, y.lon.half_width);
        ASSERT_EQ(x.time.size(), y.time.size());
        for (std::size_t t = 0; t < x.time.size(); ++t)
            EXPECT_EQ(x.time[t].value, y.time[t].value);
        EXPECT_EQ(x.target.label, y.target.label);
        EXPECT_EQ(x.target.values, y.target.values);
        EXPECT_EQ(x.target.mask, y.target.mask);
    }
}

// Union area of axis-aligned rectangles by inclusion-exclusion over all subsets.
std::size_t union_area(const std::vector<Rect>& rects)
{
    long long area = 0;
    const std::size_t n = rects.size();
    for (std::size_t subset = 1; subset < (std::size_t{1} << n); ++subset) {
        long long y0 = 0, x0 = 0, y1 = LLONG_MAX, x1 = LLONG_MAX;
        int k = 0;
        for (std::size_t i = 0; i < n; ++i)
            if (subset >> i & 1) {
                ++k;
                y0 = std::max<long long>(y0, rects[i].y);
                x0 = std::max<long long>(x0, rects[i].x);
                y1 = std::min<long long>(y1, rects[i].y + rects[i].h);
                x1 = std::min<long long>(x1, rects[i].x + rects[i].w);
            }
        const long long inter = std::max(0LL, y1 - y0) * std::max(0LL, x1 - x0);
        area += (k % 2 ? 1 : -1) * inter;
    }
    return static_cast<std::size_t>(area);
}

}  // namespace

TEST(Classification, LargeGapIsSeparableByBandZeroMean)
{
    auto spec = spec_for(TaskKind::classification, 2, 8, 1, 400);
    spec.class_gap = 1e4;
    const auto ds = generate(spec);
    EXPECT_EQ(accuracy_of_threshold(ds, spec.threshold), 1.0);
    std::size_t positives = 0;
    for (const auto& s : ds.samples)
        positives += s.target.label;
    EXPECT_GT(positives, 150u);
    EXPECT_LT(positives, 250u);
}

TEST(Classification, ZeroGapCarriesNoSignal)
{
    auto spec = spec_for(TaskKind::classification, 2, 8, 1, 4000);
    spec.class_gap = 0.0;
    const auto ds = generate(spec);
    // With n = 4000 the standard error of an accuracy near 1/2 is about 0.008.
    EXPECT_NEAR(accuracy_of_threshold(ds, spec.threshold), 0.5, 0.04);
    std::vector<double> m0, m1;
    for (const auto& s : ds.samples)
        (s.target.label ? m1 : m0).push_back(detail::band_mean(s, 0, 0));
    const auto mean = [](const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / v.size(); };
    EXPECT_NEAR(mean(m1) - mean(m0), 0.0, 0.01);
}

TEST(Classification, ModerateGapBayesAccuracy)
{
    // Band-0 mean ~ N(+-gap/2, noise^2 / pixels); the Bayes rule thresholds at 0.
    auto spec = spec_for(TaskKind::classification, 2, 4, 1, 20000);
    spec.class_gap = 0.5;
    const auto ds = generate(spec);
    const double sd = spec.pixel_noise / 4.0;
    const double bayes = 0.5 * std::erfc(-(spec.class_gap / 2.0) / (sd * std::sqrt(2.0)));
    EXPECT_NEAR(accuracy_of_threshold(ds, spec.threshold), bayes, 0.01);
}

TEST(Generators, PureFunctionOfSpecAndSeed)
{
    for (auto task : {TaskKind::classification, TaskKind::regression, TaskKind::segmentation,
                      TaskKind::paired_temporal}) {
        auto spec = spec_for(task, 2, 12, task == TaskKind::paired_temporal ? 2 : 3, 20);
        spec.rect_min = 3;
        spec.rect_max = 8;
        expect_same_dataset(generate(spec), generate(spec));
        auto other = spec;
        other.seed += 1;
        EXPECT_NE(generate(spec).samples[0].values, generate(other).samples[0].values);
    }
}

TEST(Generators, SplitAndNormalization)
{
    auto spec = spec_for(TaskKind::regression, 3, 6, 2, 40);
    spec.test_fraction = 0.25;
    const auto ds = generate(spec);
    EXPECT_EQ(ds.subset(data::Split::test).size(), 10u);
    EXPECT_EQ(ds.subset(data::Split::train).size(), 30u);
    const auto [mean, sd] = data::band_statistics(ds.subset(data::Split::train));
    EXPECT_EQ(ds.modalities.front()->band_mean, mean);
    EXPECT_EQ(ds.modalities.front()->band_std, sd);
    for (const auto& s : ds.samples)
        EXPECT_EQ(s.spec, ds.modalities.front());
}

TEST(Generators, Validation)
{
    EXPECT_THROW(generate(spec_for(TaskKind::classification, 1, 8, 1, 10)), ConfigError);
    EXPECT_THROW(generate(spec_for(TaskKind::classification, 2, 8, 1, 1)), ConfigError);
    EXPECT_THROW(generate(spec_for(TaskKind::paired_temporal, 2, 8, 3, 10)), ConfigError);
    auto s = spec_for(TaskKind::segmentation, 2, 8, 1, 10);
    s.rect_max = 9;
    EXPECT_THROW(generate(s), ConfigError);
    auto r = spec_for(TaskKind::regression, 2, 8, 2, 10);
    r.coefficients = {1.0, 2.0, 3.0};
    EXPECT_THROW(generate(r), ConfigError);
    r.coefficients.clear();
    r.test_fraction = 1.0;
    EXPECT_THROW(generate(r), ConfigError);
    EXPECT_THROW(parse_task_kind("detection"), ConfigError);
}

TEST(Regression, NoiselessTargetIsThePlantedSignal)
{
    auto spec = spec_for(TaskKind::regression, 2, 8, 3, 50);
    spec.target_noise = 0.0;
    const auto ds = generate(spec);
    const auto coef = regression_coefficients(spec);
    EXPECT_EQ(ds.planted["coefficients"].get<std::vector<double>>(), coef);
    double norm = 0.0;
    for (double c : coef)
        norm += c * c;
    EXPECT_NEAR(norm, 1.0, 1e-12);
    std::vector<double> pred, target;
    for (const auto& s : ds.samples) {
        pred.push_back(regression_signal(s, coef));
        target.push_back(s.target.values[0]);
    }
    EXPECT_EQ(metrics::rmse(pred, target), 0.0);
}

TEST(Regression, ZeroCoefficientsGivePureNoise)
{
    auto spec = spec_for(TaskKind::regression, 2, 4, 2, 5000);
    spec.coefficients.assign(4, 0.0);
    const auto ds = generate(spec);
    std::vector<double> target;
    for (const auto& s : ds.samples)
        target.push_back(s.target.values[0]);
    const double mean = std::accumulate(target.begin(), target.end(), 0.0) / target.size();
    EXPECT_NEAR(metrics::r_squared(std::vector<double>(target.size(), mean), target), 0.0, 1e-12);
    // The optimal predictor is the constant 0, whose R^2 is -mean^2 / var.
    EXPECT_NEAR(metrics::r_squared(std::vector<double>(target.size(), 0.0), target), 0.0, 2e-3);
    EXPECT_NEAR(metrics::rmse(std::vector<double>(target.size(), 0.0), target), spec.target_noise, 0.02);
}

TEST(Regression, LeastSquaresOracleReachesNoiseFloor)
{
    auto spec = spec_for(TaskKind::regression, 2, 16, 4, 2000);
    spec.target_noise = 0.5;
    const auto ds = generate(spec);
    const auto train = ds.subset(data::Split::train), test = ds.subset(data::Split::test);
    const std::size_t p = 8 + 1;
    Eigen::MatrixXd X(train.size(), p);
    Eigen::VectorXd y(train.size());
    for (std::size_t i = 0; i < train.size(); ++i) {
        const auto f = band_means(*train[i]);
        for (std::size_t k = 0; k < 8; ++k)
            X(i, k) = f[k];
        X(i, 8) = 1.0;
        y(i) = train[i]->target.values[0];
    }
    const Eigen::VectorXd beta = X.colPivHouseholderQr().solve(y);
    std::vector<double> pred, target;
    for (const auto* s : test) {
        const auto f = band_means(*s);
        double v = beta(8);
        for (std::size_t k = 0; k < 8; ++k)
            v += beta(k) * f[k];
        pred.push_back(v);
        target.push_back(s->target.values[0]);
    }
    EXPECT_NEAR(metrics::rmse(pred, target), spec.target_noise, 0.05 * spec.target_noise);
    const auto coef = regression_coefficients(spec);
    for (std::size_t k = 0; k < 8; ++k)
        EXPECT_NEAR(beta(k), coef[k], 0.05);
}

TEST(Segmentation, FullImageAndEmptyMasks)
{
    auto full = spec_for(TaskKind::segmentation, 2, 8, 1, 5);
    full.rect_min = full.rect_max = 8;
    for (const auto& s : generate(full).samples)
        EXPECT_EQ(s.target.mask, std::vector<int>(64, 1));
    auto none = full;
    none.n_rects = 0;
    for (const auto& s : generate(none).samples)
        EXPECT_EQ(s.target.mask, std::vector<int>(64, 0));
}

TEST(Segmentation, MaskAreaMatchesInclusionExclusion)
{
    auto spec = spec_for(TaskKind::segmentation, 2, 32, 1, 200);
    spec.n_rects = 4;
    spec.rect_min = 4;
    spec.rect_max = 20;
    const auto ds = generate(spec);
    for (std::size_t i = 0; i < ds.samples.size(); ++i) {
        std::vector<Rect> rects;
        for (const auto& r : ds.planted["rects"][i])
            rects.push_back({r[0].get<std::size_t>(), r[1].get<std::size_t>(), r[2].get<std::size_t>(),
                             r[3].get<std::size_t>()});
        ASSERT_EQ(rects.size(), 4u);
        const auto& mask = ds.samples[i].target.mask;
        EXPECT_EQ(static_cast<std::size_t>(std::count(mask.begin(), mask.end(), 1)), union_area(rects));
    }
}

TEST(Segmentation, BandZeroCarriesTheEdge)
{
    auto spec = spec_for(TaskKind::segmentation, 2, 32, 1, 50);
    spec.pixel_noise = 0.0;
    const auto ds = generate(spec);
    for (const auto& s : ds.samples)
        for (std::size_t y = 0; y < 32; ++y)
            for (std::size_t x = 0; x < 32; ++x)
                EXPECT_EQ(s.at(0, y, x, 0), spec.contrast * s.target.mask[y * 32 + x]);
}

TEST(PairedTemporal, IdenticalFramesAndSwapAntisymmetry)
{
    auto spec = spec_for(TaskKind::paired_temporal, 3, 8, 2, 30);
    const auto ds = generate(spec);
    const auto w = paired_band_weights(spec);
    const std::size_t frame = 8 * 8 * 3;
    for (const auto& s : ds.samples) {
        EXPECT_LT(s.time[0].value, 0.5);
        EXPECT_GE(s.time[1].value, 0.5);
        EXPECT_NEAR(s.target.values[0], frame_functional(s, 1, w) - frame_functional(s, 0, w), 1e-15);

        auto same = s;
        std::copy(s.values.begin(), s.values.begin() + frame, same.values.begin() + frame);
        EXPECT_EQ(frame_functional(same, 1, w) - frame_functional(same, 0, w), 0.0);

        auto swapped = s;
        std::swap_ranges(swapped.values.begin(), swapped.values.begin() + frame, swapped.values.begin() + frame);
        EXPECT_EQ(frame_functional(swapped, 1, w) - frame_functional(swapped, 0, w), -s.target.values[0]);
    }
}

TEST(DatasetIo, SaveLoadRoundTripIsExact)
{
    const fs::path root = fs::temp_directory_path() / "gpna_datasynth_test";
    fs::remove_all(root);
    for (auto task : {TaskKind::classification, TaskKind::regression, TaskKind::segmentation,
                      TaskKind::paired_temporal}) {
        auto spec = spec_for(task, 2, 8, task == TaskKind::paired_temporal ? 2 : 2, 12);
        spec.rect_min = 2;
        spec.rect_max = 6;
        spec.location_half_width = 0.01;
        const auto ds = generate(spec);
        const auto dir = root / to_string(task);
        data::save_dataset(ds, dir);
        const auto back = data::load_dataset(dir);
        expect_same_dataset(ds, back);
        const auto again = root / (to_string(task) + "-again");
        data::save_dataset(back, again);
        for (const auto& entry : fs::recursive_directory_iterator(dir)) {
            if (!entry.is_regular_file())
                continue;
            std::ifstream a(entry.path(), std::ios::binary), b(again / fs::relative(entry.path(), dir), std::ios::binary);
            const std::string sa((std::istreambuf_iterator<char>(a)), {}), sb((std::istreambuf_iterator<char>(b)), {});
            EXPECT_EQ(sa, sb) << entry.path();
        }
    }
    fs::remove_all(root);
}
