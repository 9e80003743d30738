#include "helpers.hpp"

#include "strata/rng.hpp"
#include "strata/textvocab.hpp"

#include <gtest/gtest.h>

#include <set>

using namespace strata;

namespace {

MorphologyParams params(KeratinStyle s, DysplasiaGrade g, DermisState d) {
    MorphologyParams p;
    p.keratin_style = s;
    p.dysplasia_grade = g;
    p.dermis_state = d;
    return p;
}

std::size_t alphabet_size(const std::vector<Caption>& corpus) {
    // Word-initial characters and "##"-prefixed continuation characters count separately.
    std::set<std::string> syms;
    for (const auto& c : corpus)
        for (const auto& w : pre_tokenize(c))
            for (std::size_t i = 0; i < w.size(); ++i) syms.insert((i ? "##" : "") + w.substr(i, 1));
    return syms.size();
}

}  // namespace

TEST(Grammar, ThickFragmentedParakeratosis) {
    auto p = params(KeratinStyle::parakeratosis, DysplasiaGrade::severe, DermisState::inflammation);
    p.keratin_thickness = 14;
    p.keratin_modifiers.thick = true;
    p.keratin_modifiers.fragmented = true;
    EXPECT_EQ(render_caption(p),
              "The upper layer shows thick and fragmented parakeratosis. The epidermis shows severe dysplasia. "
              "The dermis shows inflammation.");
}

TEST(Grammar, NormalEpidermisAndSolarDamage) {
    const auto p = params(KeratinStyle::basket_weave, DysplasiaGrade::normal, DermisState::solar_damaged);
    EXPECT_EQ(render_caption(p),
              "The upper layer shows basket weave keratosis. The epidermis appears normal. "
              "The dermis appears solar damaged.");
}

TEST(Grammar, DisplacedDermis) {
    const auto p = params(KeratinStyle::parakeratosis, DysplasiaGrade::full_thickness, DermisState::displaced);
    const auto c = render_caption(p);
    const std::string tail = "The dermis has been displaced.";
    ASSERT_GE(c.size(), tail.size());
    EXPECT_EQ(c.substr(c.size() - tail.size()), tail);
}

TEST(Grammar, LanguageIsFiniteAndDistinct) {
    const auto lang = grammar_language();
    EXPECT_GT(lang.size(), 100u);
    EXPECT_EQ(std::set<Caption>(lang.begin(), lang.end()).size(), lang.size());
}

TEST(Tokenizer, PreTokenizeDetachesPeriods) {
    EXPECT_EQ(pre_tokenize("The dermis.  Ok"), (std::vector<std::string>{"The", "dermis", ".", "Ok"}));
}

TEST(Tokenizer, ExhaustiveRoundTripWithoutUnknowns) {
    const auto& vocab = test::grammar_vocab();
    for (const auto& c : grammar_language()) {
        const auto toks = tokenize(c, vocab);
        ASSERT_EQ(toks.front(), special::start);
        ASSERT_EQ(toks.back(), special::stop);
        for (auto t : toks) ASSERT_NE(t, special::unk) << c;
        ASSERT_EQ(detokenize(toks, vocab), c);
    }
}

TEST(Tokenizer, GrammarWordsNeedAtMostThreePieces) {
    const auto& vocab = test::grammar_vocab();
    EXPECT_LE(vocab.size(), 250u);
    for (const auto& w : grammar_lexicon()) EXPECT_LE(tokenize(w, vocab).size() - 2, 3u) << w;
}

TEST(Tokenizer, MinimalSizeGivesCharacterVocabulary) {
    const auto lang = grammar_language();
    const auto n = special::count + alphabet_size(lang);
    const auto v = train_wordpiece(lang, n);
    for (std::size_t i = special::count; i < v.size(); ++i) {
        const auto& p = v.pieces()[i];
        const auto body = p.rfind("##", 0) == 0 ? p.substr(2) : p;
        EXPECT_EQ(body.size(), 1u) << p;
    }
    EXPECT_THROW(train_wordpiece(lang, special::count + 1), std::invalid_argument);
}

TEST(Tokenizer, TrainingIsDeterministic) {
    const auto lang = grammar_language();
    EXPECT_EQ(train_wordpiece(lang, 120), train_wordpiece(lang, 120));
    EXPECT_EQ(train_wordpiece(lang, 120).content_hash(), train_wordpiece(lang, 120).content_hash());
}

TEST(Tokenizer, GreedyLongestMatchByHand) {
    const Vocabulary v({"[PAD]", "[START]", "[STOP]", "[UNK]", "d", "dys", "##p", "##plasia", "##y", "##s"});
    const auto t = tokenize("dysplasia", v);
    EXPECT_EQ(t, (TokenSeq{special::start, v.id_of("dys"), v.id_of("##plasia"), special::stop}));
    const auto u = tokenize("dx", v);
    // "x" has no piece, so only that character becomes [UNK].
    EXPECT_EQ(u, (TokenSeq{special::start, v.id_of("d"), special::unk, special::stop}));
}

TEST(Tokenizer, DetokenizeEdgeCases) {
    const auto& v = test::grammar_vocab();
    const auto dermis = v.id_of("dermis");
    ASSERT_GE(dermis, 0);
    EXPECT_EQ(detokenize({special::start, dermis, special::stop}, v), "dermis");
    EXPECT_EQ(detokenize({special::start, special::pad, special::stop}, v), "");
    EXPECT_THROW(detokenize({static_cast<std::int32_t>(v.size())}, v), std::out_of_range);
}

TEST(Tokenizer, VocabularyFileRoundTrip) {
    test::TempDir dir("vocab");
    const auto& v = test::grammar_vocab();
    v.save((dir / "v.txt").string());
    const auto back = Vocabulary::load((dir / "v.txt").string());
    EXPECT_EQ(back, v);
    EXPECT_EQ(back.content_hash(), v.content_hash());
}

TEST(CaptionAccuracy, HandAlignedPair) {
    EXPECT_NEAR(caption_accuracy("The upper layer shows thick parakeratosis.", "The upper layer shows parakeratosis."),
                4.0 / 6.0, 1e-12);
}

TEST(CaptionAccuracy, IdentityDisjointAndEmpty) {
    EXPECT_EQ(caption_accuracy("a b c.", "a b c."), 1.0);
    EXPECT_EQ(caption_accuracy("a b c", "d e f"), 0.0);
    EXPECT_EQ(caption_accuracy("", ""), 1.0);
    EXPECT_EQ(caption_accuracy("a", ""), 0.0);
    // Periods stay attached, so a missing period is a mismatch.
    EXPECT_NEAR(caption_accuracy("a b", "a b."), 0.5, 1e-12);
}

// Properties over random grammar caption pairs.
TEST(CaptionAccuracy, SymmetricAndAppendingNeverHelps) {
    const auto lang = grammar_language();
    Rng rng(17);
    for (int i = 0; i < 500; ++i) {
        const auto& a = lang[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(lang.size()) - 1))];
        const auto& b = lang[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(lang.size()) - 1))];
        EXPECT_EQ(caption_accuracy(a, b), caption_accuracy(b, a));
        EXPECT_LE(caption_accuracy(a + " extra", b), caption_accuracy(a, b));
        // Against its own truth an inserted word can only cost.
        std::string inserted = a;
        const auto pos = static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(a.size())));
        const auto space = a.find(' ', pos);
        inserted.insert(space == std::string::npos ? a.size() : space, " extra");
        EXPECT_LT(caption_accuracy(inserted, a), 1.0);
        EXPECT_LE(caption_accuracy(inserted, a), caption_accuracy(a, a));
    }
}

// Positional matching: an insertion can re-align a prediction that was shifted.
TEST(CaptionAccuracy, InsertionCanRealignShiftedPrediction) {
    EXPECT_NEAR(caption_accuracy("b c d.", "a b c d."), 0.0, 1e-12);
    EXPECT_NEAR(caption_accuracy("x b c d.", "a b c d."), 0.75, 1e-12);
}
