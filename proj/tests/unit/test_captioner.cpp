#include "helpers.hpp"

#include "strata/captioner.hpp"
#include "strata/rng.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace strata;
using namespace strata::cap;

namespace {

torch::Tensor random_codes(int n, int len, int k, std::uint64_t seed) {
    Rng rng(seed);
    auto q = torch::empty({n, len}, torch::kInt64);
    auto a = q.accessor<std::int64_t, 2>();
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < len; ++j) a[i][j] = rng.uniform_int(0, k - 1);
    return q;
}

CaptionerConfig desk_config() {
    return CaptionerConfig::for_models(vq::VQConfig::desk(), test::grammar_vocab(), vq::Profile::desk);
}

}  // namespace

TEST(Captioner, UntrainedLossIsNearLogVocab) {
    torch::manual_seed(0);
    const auto& vocab = test::grammar_vocab();
    const auto cfg = desk_config();
    Captioner m(cfg);
    m->eval();
    const auto lang = grammar_language();
    std::vector<TokenSeq> seqs;
    for (int i = 0; i < 16; ++i) seqs.push_back(tokenize(lang[static_cast<std::size_t>(i * 37) % lang.size()], vocab));
    torch::NoGradGuard ng;
    const double loss = teacher_forced_loss(m, random_codes(16, cfg.image_len, cfg.image_vocab, 1),
                                            pad_tokens(seqs, cfg.max_caption_len)).item<double>();
    const double expect = std::log(static_cast<double>(vocab.size()));
    EXPECT_NEAR(loss, expect, 0.1 * expect);
}

TEST(Captioner, CausalMaskIsolatesFutureTokens) {
    torch::manual_seed(1);
    const auto cfg = test::tiny_cap_config(test::tiny_vq_config(), test::grammar_vocab());
    Captioner m(cfg);
    m->eval();
    torch::NoGradGuard ng;
    const auto q = random_codes(1, cfg.image_len, cfg.image_vocab, 2);
    auto tokens = torch::tensor({1, 10, 11, 12, 13, 14}, torch::kInt64).unsqueeze(0);
    const auto memory = m->encode(q);
    const auto base = m->decode(memory, tokens);
    for (int t = 0; t + 1 < 6; ++t) {
        auto perturbed = tokens.clone();
        perturbed[0][t + 1] = 40;
        const auto out = m->decode(memory, perturbed);
        for (int s = 0; s <= t; ++s) ASSERT_TRUE(torch::equal(out[0][s], base[0][s])) << "position " << s;
    }
}

TEST(Captioner, PaddingTailNeverChangesLoss) {
    torch::manual_seed(2);
    const auto& vocab = test::grammar_vocab();
    const auto cfg = test::tiny_cap_config(test::tiny_vq_config(), vocab);
    Captioner m(cfg);
    m->eval();
    torch::NoGradGuard ng;
    const auto q = random_codes(2, cfg.image_len, cfg.image_vocab, 3);
    const std::vector<TokenSeq> seqs{tokenize("The dermis shows inflammation.", vocab), tokenize("The epidermis appears normal.", vocab)};
    const double a = teacher_forced_loss(m, q, pad_tokens(seqs, 20)).item<double>();
    const double b = teacher_forced_loss(m, q, pad_tokens(seqs, 40)).item<double>();
    EXPECT_NEAR(a, b, 1e-6);
    EXPECT_THROW(pad_tokens(seqs, 3), std::invalid_argument);
}

TEST(Captioner, UnusedImageRowsGetZeroGradient) {
    torch::manual_seed(3);
    const auto& vocab = test::grammar_vocab();
    auto cfg = test::tiny_cap_config(test::tiny_vq_config(), vocab);
    Captioner m(cfg);
    const auto q = random_codes(4, cfg.image_len, 6, 4);  // only rows 0..5 appear
    const std::vector<TokenSeq> seqs(4, tokenize("The dermis shows inflammation.", vocab));
    teacher_forced_loss(m, q, pad_tokens(seqs, 16)).backward();
    const auto g = m->image_embed->weight.grad();
    EXPECT_GT(g.narrow(0, 0, 6).abs().sum().item<double>(), 0.0);
    EXPECT_EQ(g.narrow(0, 6, cfg.image_vocab - 6).abs().sum().item<double>(), 0.0);
}

TEST(Captioner, MemorizesSinglePairAndDecodesIt) {
    torch::manual_seed(4);
    const auto& vocab = test::grammar_vocab();
    auto cfg = desk_config();
    cfg.dropout = 0.0;
    Captioner m(cfg);
    const auto q = random_codes(1, cfg.image_len, cfg.image_vocab, 5);
    const Caption truth = "The upper layer shows thick and fragmented parakeratosis. The epidermis shows severe dysplasia. "
                          "The dermis shows inflammation.";
    const auto tokens = pad_tokens({tokenize(truth, vocab)}, cfg.max_caption_len);
    torch::optim::Adam opt(m->parameters(), torch::optim::AdamOptions(cfg.lr));
    for (int step = 0; step < 500; ++step) {
        opt.zero_grad();
        auto loss = teacher_forced_loss(m, q, tokens);
        loss.backward();
        opt.step();
    }
    m->eval();
    {
        torch::NoGradGuard ng;
        EXPECT_LT(teacher_forced_loss(m, q, tokens).item<double>(), 0.01);
    }
    const auto g = generate(m, q, vocab);
    ASSERT_EQ(g.size(), 1u);
    EXPECT_FALSE(g[0].truncated);
    EXPECT_EQ(g[0].text, truth);
    EXPECT_EQ(generate(m, q, vocab)[0].text, truth);
}

TEST(Captioner, GreedyDecodingAlwaysTerminates) {
    torch::manual_seed(5);
    const auto& vocab = test::grammar_vocab();
    auto cfg = test::tiny_cap_config(test::tiny_vq_config(), vocab);
    cfg.max_caption_len = 12;
    Captioner m(cfg);
    const auto out = generate(m, random_codes(8, cfg.image_len, cfg.image_vocab, 6), vocab);
    ASSERT_EQ(out.size(), 8u);
    for (const auto& g : out) {
        EXPECT_LE(static_cast<int>(g.tokens.size()), cfg.max_caption_len);
        EXPECT_EQ(g.truncated, g.tokens.back() != special::stop);
    }
}

TEST(Captioner, CheckpointRoundTripAndConfig) {
    const auto& vocab = test::grammar_vocab();
    const auto cfg = test::tiny_cap_config(test::tiny_vq_config(), vocab);
    Captioner m(cfg);
    m->eval();
    auto back = load_captioner(Checkpoint::deserialize(to_checkpoint(m).serialize()));
    const auto q = random_codes(2, cfg.image_len, cfg.image_vocab, 7);
    torch::NoGradGuard ng;
    const auto t = torch::tensor({1, 5, 6}, torch::kInt64).unsqueeze(0).repeat({2, 1});
    EXPECT_TRUE(torch::equal(m->forward(q, t), back->forward(q, t)));

    auto c = cfg;
    EXPECT_THROW(c.set("nope", "1"), std::invalid_argument);
    c.heads = 3;
    EXPECT_THROW(c.validate(), std::invalid_argument);
    EXPECT_EQ(CaptionerConfig::paper().layers, 4);
}

TEST(Captioner, FlattenCodesIsRowMajor) {
    auto idx = torch::arange(8, torch::kInt64).reshape({2, 2, 2});
    EXPECT_TRUE(torch::equal(flatten_codes(idx), torch::arange(8, torch::kInt64).reshape({2, 4})));
}
