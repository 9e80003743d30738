#include "helpers.hpp"

#include "strata/featmap.hpp"
#include "strata/rng.hpp"

#include <gtest/gtest.h>

using namespace strata;
using namespace strata::fae;

TEST(FeatureAutoencoder, DeskAndPaperShapes) {
    torch::NoGradGuard ng;
    FeatureAutoencoder desk(FAEConfig::for_vq(vq::VQConfig::desk(), vq::Profile::desk));
    const auto w = desk->encode_w(torch::zeros({2, 64, 8, 8}));
    EXPECT_EQ(w.sizes(), (std::vector<std::int64_t>{2, 128}));
    EXPECT_EQ(desk->decode_w(w).sizes(), (std::vector<std::int64_t>{2, 64, 8, 8}));
    EXPECT_TRUE(torch::isfinite(w).all().item<bool>());

    FeatureAutoencoder paper(FAEConfig::for_vq(vq::VQConfig::paper(), vq::Profile::paper));
    const auto wp = paper->encode_w(torch::zeros({1, 256, 16, 16}));
    EXPECT_EQ(wp.size(1), 512);
    EXPECT_EQ(paper->decode_w(wp).sizes(), (std::vector<std::int64_t>{1, 256, 16, 16}));
}

TEST(FeatureAutoencoder, DimensionMismatchRejected) {
    FeatureAutoencoder m(FAEConfig::for_vq(vq::VQConfig::desk(), vq::Profile::desk));
    EXPECT_THROW(m->encode_w(torch::zeros({1, 32, 8, 8})), std::invalid_argument);
    EXPECT_THROW(m->decode_w(torch::zeros({1, 127})), std::invalid_argument);
}

TEST(FeatureAutoencoder, OverfitsSingleSample) {
    torch::manual_seed(8);
    const auto cfg = FAEConfig::for_vq(vq::VQConfig::desk(), vq::Profile::desk);
    FeatureAutoencoder m(cfg);
    const auto z = torch::randn({1, 64, 8, 8});
    torch::optim::Adam opt(m->parameters(), torch::optim::AdamOptions(cfg.lr));
    for (int step = 0; step < 500; ++step) {
        opt.zero_grad();
        auto loss = torch::mse_loss(m->forward(z), z);
        loss.backward();
        opt.step();
    }
    EXPECT_LT(feature_mse(m, z), 1e-3);
}

TEST(FeatureAutoencoder, TrainingBeatsMeanPredictorOnLowRankFeatures) {
    auto v = test::tiny_vq_config();
    auto cfg = test::tiny_fae_config(v);
    cfg.max_epochs = 30;
    torch::manual_seed(2);
    const auto basis = torch::randn({4, cfg.in_channels * cfg.grid * cfg.grid});
    auto make = [&](int n) { return torch::matmul(torch::randn({n, 4}), basis).reshape({n, cfg.in_channels, cfg.grid, cfg.grid}); };
    const auto train = make(256), val = make(64);
    TrainOptions o;
    const auto r = train_fae_features(train, val, cfg, o, "vq-id");
    ASSERT_EQ(r.log.size(), 30u);
    EXPECT_LE(r.best.val_loss(), r.log[0].val_mse);
    EXPECT_LT(r.best.val_loss(), r.feature_variance);
    EXPECT_EQ(r.best.meta("vq_id"), "vq-id");
    auto reloaded = load_fae(r.best);
    EXPECT_NEAR(feature_mse(reloaded, val), r.best.val_loss(), 1e-5);
}

TEST(FeatureAutoencoder, RoundTripUsesGenuineCodebookRows) {
    const auto v = test::tiny_vq_config();
    vq::VQModel vq(v);
    vq->eval();
    FeatureAutoencoder f(test::tiny_fae_config(v));
    torch::manual_seed(4);
    const auto x = torch::rand({2, 3, 32, 32}) * 2 - 1;
    const auto out = roundtrip(vq, f, x);
    EXPECT_EQ(out.sizes(), x.sizes());
    EXPECT_LE(out.abs().max().item<double>(), 1.0);
    torch::NoGradGuard ng;
    const auto w = f->encode_w(vq->encode(x));
    const auto codes = codes_from_w(vq, f, w);
    EXPECT_GE(codes.min().item<std::int64_t>(), 0);
    EXPECT_LT(codes.max().item<std::int64_t>(), v.k);
    EXPECT_TRUE(torch::equal(out, vq->decode(vq::lookup(codes, vq->codebook))));
    EXPECT_TRUE(torch::equal(out, roundtrip(vq, f, x)));
}

TEST(FeatureAutoencoder, ImageHelpersAndCheckpoint) {
    const auto v = test::tiny_vq_config();
    vq::VQModel vq(v);
    FeatureAutoencoder f(test::tiny_fae_config(v));
    Image img(32, 32, 0.2f);
    const auto w = image_to_w(vq, f, img);
    EXPECT_EQ(static_cast<int>(w.size()), f->config().D);
    EXPECT_EQ(w, image_to_w(vq, f, img));
    const auto out = w_to_image(vq, f, w);
    EXPECT_EQ(out.height(), 32);
    EXPECT_THROW(w_to_image(vq, f, std::vector<double>(3, 0.0)), std::invalid_argument);

    auto g = load_fae(Checkpoint::deserialize(to_checkpoint(f).serialize()));
    EXPECT_EQ(image_to_w(vq, g, img), w);

    auto mismatched = test::tiny_fae_config(v);
    mismatched.in_channels = 4;
    FeatureAutoencoder bad(mismatched);
    EXPECT_THROW(image_to_w(vq, bad, img), std::invalid_argument);
}

TEST(FAEConfig, OverridesAndValidation) {
    auto c = FAEConfig::for_vq(vq::VQConfig::desk(), vq::Profile::desk);
    c.set("D", "64");
    EXPECT_EQ(c.D, 64);
    EXPECT_THROW(c.set("bogus", "1"), std::invalid_argument);
    c.stage_channels = {8, 8, 8, 8};
    EXPECT_THROW(c.validate(), std::invalid_argument);
    EXPECT_EQ(FAEConfig::paper().D, 512);
}
