#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "fixtures.hpp"
#include "gpna/heads.hpp"
#include "gpna/model.hpp"
#include "op_check.hpp"

using namespace gpna;
using namespace gpna::model;
using gpna::num::ParamStore;
using gpna::num::Tape;
using gpna::num::Tensor;
using gpna::testing_support::random_values;

namespace {

BackboneConfig head_backbone()
{
    BackboneConfig c;
    c.n_latents = 5;
    c.latent_dim = 8;
    c.n_self_layers = 1;
    c.n_heads = 2;
    return c;
}

const encoding::FrequencyBank& query_bank()
{
    static const auto bank = encoding::make_frequency_bank({encoding::BankMode::directional, 3, 0.5, 4.0, 2, 3});
    return bank;
}

HeadSpec classification(const std::string& id, std::size_t classes)
{
    return {id, HeadKind::classification, classes, 1, 0, 0};
}

HeadSpec segmentation(const std::string& id, std::size_t h, std::size_t w, std::size_t classes = 3)
{
    return {id, HeadKind::segmentation, classes, 1, h, w};
}

Tensor random_latents(std::mt19937_64& rng, std::size_t batch, std::size_t n = 5)
{
    return Tensor::constant({batch, n, 8}, random_values(rng, batch * n * 8, -1.5, 1.5));
}

Tensor permute_latents(Tape& tape, const Tensor& z, std::mt19937_64& rng)
{
    const std::size_t n = z.dim(1);
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    auto flat = num::reshape(tape, z, {n, z.dim(2)});
    return num::reshape(tape, num::gather_rows(tape, flat, perm), z.shape());
}

double max_abs_diff(std::span<const double> a, std::span<const double> b)
{
    double d = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        d = std::max(d, std::abs(a[i] - b[i]));
    return d;
}

}  // namespace

TEST(PooledHead, LogitWidthEqualsClassCount)
{
    ParamStore store;
    Head h(store, classification("c", 7), head_backbone(), query_bank(), 1);
    std::mt19937_64 rng(1);
    Tape tape;
    EXPECT_EQ(pooled_head(tape, random_latents(rng, 3), h).shape(), (num::Shape{3, 7}));
    ParamStore s2;
    Head r(s2, {"r", HeadKind::regression, 2, 4, 0, 0}, head_backbone(), query_bank(), 1);
    EXPECT_EQ(pooled_head(tape, random_latents(rng, 2), r).shape(), (num::Shape{2, 4}));
}

TEST(PooledHead, SingleLatentMatchesDirectComposition)
{
    ParamStore store;
    Head h(store, classification("c", 3), head_backbone(), query_bank(), 2);
    std::mt19937_64 rng(2);
    auto z = random_latents(rng, 1, 1);
    Tape tape;
    auto got = pooled_head(tape, z, h);
    // One key: attention weight 1, so the block reduces to q + out(v(LN(z))).
    const auto& p = h.params();
    auto kv = p.cross.norm_kv.apply(tape, z, h.eps());
    auto attended = p.cross.attn.out.apply(tape, p.cross.attn.v.apply(tape, kv));
    auto q = num::reshape(tape, p.query, {1, 1, 8});
    auto want = p.mlp.apply(tape, num::add(tape, q, attended));
    EXPECT_LT(max_abs_diff(got.values(), want.values()), 1e-12);
}

TEST(PooledHead, LatentPermutationInvariance)
{
    ParamStore store;
    Head h(store, classification("c", 4), head_backbone(), query_bank(), 3);
    std::mt19937_64 rng(3);
    for (int i = 0; i < 20; ++i) {
        auto z = random_latents(rng, 1);
        Tape tape;
        auto a = pooled_head(tape, z, h);
        auto b = pooled_head(tape, permute_latents(tape, z, rng), h);
        EXPECT_LT(max_abs_diff(a.values(), b.values()), 1e-12);
    }
}

TEST(PooledHead, KindMismatchRejected)
{
    ParamStore store;
    Head seg(store, segmentation("s", 2, 2), head_backbone(), query_bank(), 1);
    Head cls(store, classification("c", 2), head_backbone(), query_bank(), 1);
    std::mt19937_64 rng(4);
    Tape tape;
    EXPECT_THROW(pooled_head(tape, random_latents(rng, 1), seg), ConfigError);
    EXPECT_THROW(segmentation_head(tape, random_latents(rng, 1), cls), ConfigError);
}

TEST(SegmentationHead, OutputShape)
{
    ParamStore store;
    Head h(store, segmentation("s", 4, 6), head_backbone(), query_bank(), 1);
    Head one(store, segmentation("one", 1, 1, 5), head_backbone(), query_bank(), 1);
    std::mt19937_64 rng(5);
    Tape tape;
    EXPECT_EQ(segmentation_head(tape, random_latents(rng, 2), h).shape(), (num::Shape{2, 24, 3}));
    EXPECT_EQ(segmentation_head(tape, random_latents(rng, 1), one).shape(), (num::Shape{1, 1, 5}));
}

TEST(SegmentationHead, IdenticalEncodingsGiveIdenticalOutputs)
{
    // Frequency 2 on an axis-aligned bank: pixel centers 0.25 and 0.75 of a 1x2 image
    // land on the same phase, so both queries coincide.
    ParamStore store;
    const auto bank = encoding::FrequencyBank::axis_aligned({2.0});
    Head h(store, segmentation("s", 1, 2), head_backbone(), bank, 6);
    auto enc = h.params().query_encodings;
    ASSERT_EQ(enc.size(), 8u);
    for (std::size_t i = 0; i < 4; ++i)
        EXPECT_NEAR(enc[i], enc[4 + i], 1e-15);
    std::copy_n(enc.begin(), 4, enc.begin() + 4);
    std::mt19937_64 rng(6);
    Tape tape;
    auto y = h.forward_queries(tape, random_latents(rng, 1), enc);
    for (std::size_t c = 0; c < 3; ++c)
        EXPECT_EQ(y.values()[c], y.values()[3 + c]);
}

TEST(SegmentationHead, PixelDependsOnlyOnItsEncoding)
{
    ParamStore store;
    Head h(store, segmentation("s", 3, 3), head_backbone(), query_bank(), 7);
    std::mt19937_64 rng(7);
    auto z = random_latents(rng, 1);
    const auto enc = h.params().query_encodings;
    const std::size_t e = h.params().encoding_width, k = 3;
    Tape tape;
    auto ref = h.forward_queries(tape, z, enc);
    for (auto [i, j] : {std::pair<std::size_t, std::size_t>{0, 8}, {2, 4}, {1, 7}}) {
        auto swapped = enc;
        std::swap_ranges(swapped.begin() + i * e, swapped.begin() + (i + 1) * e, swapped.begin() + j * e);
        auto y = h.forward_queries(tape, z, swapped);
        for (std::size_t px = 0; px < 9; ++px) {
            const std::size_t src = px == i ? j : px == j ? i : px;
            for (std::size_t c = 0; c < k; ++c)
                EXPECT_NEAR(y.values()[px * k + c], ref.values()[src * k + c], 1e-12) << px;
        }
    }
}

TEST(SegmentationHead, LatentPermutationInvariance)
{
    ParamStore store;
    Head h(store, segmentation("s", 4, 4), head_backbone(), query_bank(), 8);
    std::mt19937_64 rng(8);
    for (int i = 0; i < 10; ++i) {
        auto z = random_latents(rng, 1);
        Tape tape;
        auto a = segmentation_head(tape, z, h);
        auto b = segmentation_head(tape, permute_latents(tape, z, rng), h);
        EXPECT_LT(max_abs_diff(a.values(), b.values()), 1e-12);
    }
}

TEST(SegmentationHead, QueriesAreDirectionalPixelEncodings)
{
    const auto enc = pixel_query_encodings(2, 4, query_bank());
    const std::size_t e = query_bank().width(2);
    ASSERT_EQ(enc.size(), 8 * e);
    const std::vector<double> center{(1 + 0.5) / 2.0, (2 + 0.5) / 4.0};
    const auto want = encoding::encode_directional(center, query_bank());
    for (std::size_t i = 0; i < e; ++i)
        EXPECT_EQ(enc[6 * e + i], want[i]);
}

TEST(MultiHead, HeadsAreIndependent)
{
    ParamStore store;
    Head field(store, segmentation("field", 4, 4, 2), head_backbone(), query_bank(), 9);
    Head area(store, segmentation("area", 4, 4, 2), head_backbone(), query_bank(), 9);
    Head cls(store, classification("crop", 5), head_backbone(), query_bank(), 9);
    std::mt19937_64 rng(9);
    auto z = random_latents(rng, 2);
    Tape tape;
    auto all = multi_head_forward(tape, z, {&field, &area, &cls});
    auto single = multi_head_forward(tape, z, {&field});
    EXPECT_EQ(all.at("field").vec(), single.at("field").vec());
    EXPECT_EQ(all.at("field").vec(), segmentation_head(tape, z, field).vec());
    EXPECT_NE(all.at("field").vec(), all.at("area").vec());

    for (auto& e : store.entries())
        if (e.name.starts_with("head.area."))
            for (auto& v : e.tensor.mutable_values())
                v += 0.37;
    auto after = multi_head_forward(tape, z, {&field, &area, &cls});
    EXPECT_EQ(after.at("field").vec(), all.at("field").vec());
    EXPECT_EQ(after.at("crop").vec(), all.at("crop").vec());
    EXPECT_NE(after.at("area").vec(), all.at("area").vec());
}

TEST(MultiHead, DuplicateIdsRejected)
{
    ParamStore a, b;
    Head h1(a, classification("x", 2), head_backbone(), query_bank(), 1);
    Head h2(b, classification("x", 3), head_backbone(), query_bank(), 1);
    std::mt19937_64 rng(10);
    Tape tape;
    EXPECT_THROW(multi_head_forward(tape, random_latents(rng, 1), {&h1, &h2}), ConfigError);
    EXPECT_THROW(multi_head_forward(tape, random_latents(rng, 1), {}), ConfigError);
}

TEST(MultiHead, AddingAHeadLeavesOthersUnchanged)
{
    auto spec = testing_support::make_spec("m", {"a", "b"}, 16, 16);
    ModelConfig cfg;
    cfg.tokenizer = testing_support::small_tokenizer_config();
    cfg.backbone = head_backbone();
    cfg.heads = {classification("crop", 3)};
    Model one(cfg, {*spec});
    cfg.heads.push_back(segmentation("field", 16, 16, 2));
    Model two(cfg, {*spec});
    std::mt19937_64 rng(11);
    const auto s = testing_support::random_sample(spec, rng);
    const std::vector<const tok::GeoSample*> batch{&s};
    Tape tape;
    EXPECT_EQ(one.forward(tape, batch).outputs.at("crop").vec(), two.forward(tape, batch).outputs.at("crop").vec());
}

TEST(Heads, GradientsMatchFiniteDifferences)
{
    ParamStore store;
    Head seg(store, segmentation("s", 2, 3), head_backbone(), query_bank(), 12);
    Head cls(store, classification("c", 3), head_backbone(), query_bank(), 12);
    std::mt19937_64 rng(12);
    auto z = Tensor::parameter({2, 5, 8}, random_values(rng, 80));
    auto op_seg = [&](Tape& tape, const std::vector<Tensor>& in) { return segmentation_head(tape, in[0], seg); };
    auto op_cls = [&](Tape& tape, const std::vector<Tensor>& in) { return pooled_head(tape, in[0], cls); };
    EXPECT_LT(testing_support::op_gradient_error(op_seg, {z}, 1, 1e-5), 1e-4);
    EXPECT_LT(testing_support::op_gradient_error(op_cls, {z}, 2, 1e-5), 1e-4);
}
