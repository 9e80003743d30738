#pragma once

// Caption grammar, WordPiece subword vocabulary and the strict word-accuracy metric.

#include "strata/morphology.hpp"

#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace strata {

/// Three-sentence caption text.
using Caption = std::string;

/// Fills the fixed three-sentence template from the parameters.
Caption render_caption(const MorphologyParams& params);

/// Every caption the grammar can produce (all style/modifier/grade/state combinations).
std::vector<Caption> grammar_language();

/// Distinct whitespace-separated words of the grammar, periods detached.
std::vector<std::string> grammar_lexicon();

namespace special {
inline constexpr std::int32_t pad = 0;
inline constexpr std::int32_t start = 1;
inline constexpr std::int32_t stop = 2;
inline constexpr std::int32_t unk = 3;
inline constexpr std::int32_t count = 4;
}  // namespace special

using TokenSeq = std::vector<std::int32_t>;

class Vocabulary {
public:
    Vocabulary() = default;
    /// `pieces` must start with the four specials in id order.
    explicit Vocabulary(std::vector<std::string> pieces);

    std::size_t size() const { return pieces_.size(); }
    const std::string& piece(std::int32_t id) const;
    /// -1 when absent.
    std::int32_t id_of(std::string_view piece) const;
    const std::vector<std::string>& pieces() const { return pieces_; }

    void save(const std::string& path) const;
    static Vocabulary load(const std::string& path);
    /// FNV-1a over the file representation; recorded by checkpoints that depend on the vocabulary.
    std::string content_hash() const;

    friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.pieces_ == b.pieces_; }

private:
    std::vector<std::string> pieces_;
    std::unordered_map<std::string, std::int32_t> index_;
};

inline constexpr std::string_view kContinuation = "##";

/// Splits on whitespace and detaches every '.' as its own word.
std::vector<std::string> pre_tokenize(std::string_view text);

/// Learns subword merges scored by pair_freq / (left_freq * right_freq); ties go to the
/// lexicographically smallest pair. Throws when max_size cannot hold specials plus the alphabet.
Vocabulary train_wordpiece(const std::vector<Caption>& corpus, std::size_t max_size);

/// Greedy longest-prefix WordPiece encoding wrapped in [START] ... [STOP].
TokenSeq tokenize(std::string_view caption, const Vocabulary& vocab);

/// Drops specials, merges "##" continuations, reattaches periods.
Caption detokenize(const TokenSeq& tokens, const Vocabulary& vocab);

/// Positional exact-word matches divided by the longer word count; periods stay attached.
double caption_accuracy(std::string_view predicted, std::string_view truth);

}  // namespace strata
