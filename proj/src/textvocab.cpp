#include "strata/textvocab.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

namespace strata {

namespace {

std::string_view style_phrase(KeratinStyle s) {
    switch (s) {
        case KeratinStyle::basket_weave: return "basket weave keratosis";
        case KeratinStyle::basket_weave_parakeratosis: return "basket weave keratosis with parakeratosis";
        case KeratinStyle::parakeratosis: return "parakeratosis";
        case KeratinStyle::keratosis: return "keratosis";
        case KeratinStyle::eroded: return "eroded";
    }
    throw std::invalid_argument("bad KeratinStyle");
}

std::string_view grade_word(DysplasiaGrade g) {
    switch (g) {
        case DysplasiaGrade::normal: return "normal";
        case DysplasiaGrade::mild: return "mild";
        case DysplasiaGrade::moderate: return "moderate";
        case DysplasiaGrade::severe: return "severe";
        case DysplasiaGrade::full_thickness: return "full-thickness";
    }
    throw std::invalid_argument("bad DysplasiaGrade");
}

std::string_view dermis_sentence(DermisState d) {
    switch (d) {
        case DermisState::normal: return "The dermis appears normal.";
        case DermisState::abnormal: return "The dermis appears abnormal.";
        case DermisState::solar_damaged: return "The dermis appears solar damaged.";
        case DermisState::inflammation: return "The dermis shows inflammation.";
        case DermisState::displaced: return "The dermis has been displaced.";
    }
    throw std::invalid_argument("bad DermisState");
}

// Length in bytes of the UTF-8 sequence starting with `lead`.
std::size_t utf8_len(unsigned char lead) {
    if (lead < 0x80) return 1;
    if ((lead >> 5) == 0x6) return 2;
    if ((lead >> 4) == 0xE) return 3;
    if ((lead >> 3) == 0x1E) return 4;
    return 1;
}

std::vector<std::string> code_points(std::string_view word) {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < word.size();) {
        auto n = std::min(utf8_len(static_cast<unsigned char>(word[i])), word.size() - i);
        out.emplace_back(word.substr(i, n));
        i += n;
    }
    return out;
}

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

std::vector<std::string_view> split_ws(std::string_view text) {
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && is_space(text[i])) ++i;
        std::size_t j = i;
        while (j < text.size() && !is_space(text[j])) ++j;
        if (j > i) out.push_back(text.substr(i, j - i));
        i = j;
    }
    return out;
}

bool is_continuation(std::string_view piece) { return piece.starts_with(kContinuation); }

}  // namespace

Caption render_caption(const MorphologyParams& p) {
    std::vector<std::string_view> mods;
    const auto& m = p.keratin_modifiers;
    if (m.thin) mods.push_back("thin");
    if (m.thick) mods.push_back("thick");
    if (m.fragmented) mods.push_back("fragmented");
    if (m.detached) mods.push_back("detached");

    std::string s = "The upper layer shows ";
    for (std::size_t i = 0; i < mods.size(); ++i) {
        if (i > 0) s += (i + 1 == mods.size()) ? " and " : " ";
        s += mods[i];
    }
    if (!mods.empty()) s += ' ';
    s += style_phrase(p.keratin_style);
    s += ". ";
    if (p.dysplasia_grade == DysplasiaGrade::normal) {
        s += "The epidermis appears normal. ";
    } else {
        s += "The epidermis shows ";
        s += grade_word(p.dysplasia_grade);
        s += " dysplasia. ";
    }
    s += dermis_sentence(p.dermis_state);
    return s;
}

std::vector<Caption> grammar_language() {
    std::vector<Caption> out;
    MorphologyParams p;
    for (auto style : kAllKeratinStyles)
        for (int thickness_class = 0; thickness_class < 3; ++thickness_class)
            for (int frag = 0; frag < 2; ++frag)
                for (int det = 0; det < 2; ++det)
                    for (auto grade : kAllDysplasiaGrades)
                        for (auto dermis : kAllDermisStates) {
                            p.keratin_style = style;
                            p.keratin_modifiers = {thickness_class == 0, thickness_class == 2, frag == 1, det == 1};
                            p.dysplasia_grade = grade;
                            p.dermis_state = dermis;
                            out.push_back(render_caption(p));
                        }
    return out;
}

std::vector<std::string> grammar_lexicon() {
    std::set<std::string> words;
    for (const auto& c : grammar_language())
        for (auto& w : pre_tokenize(c)) words.insert(w);
    return {words.begin(), words.end()};
}

Vocabulary::Vocabulary(std::vector<std::string> pieces) : pieces_(std::move(pieces)) {
    static const char* kSpecials[] = {"[PAD]", "[START]", "[STOP]", "[UNK]"};
    if (pieces_.size() < special::count) throw std::invalid_argument("vocabulary is missing special tokens");
    for (int i = 0; i < special::count; ++i) {
        if (pieces_[i] != kSpecials[i]) {
            throw std::invalid_argument(std::string("vocabulary id ") + std::to_string(i) + " must be " + kSpecials[i]);
        }
    }
    for (std::size_t i = 0; i < pieces_.size(); ++i) {
        if (pieces_[i].empty()) throw std::invalid_argument("empty vocabulary piece at id " + std::to_string(i));
        if (!index_.emplace(pieces_[i], static_cast<std::int32_t>(i)).second) {
            throw std::invalid_argument("duplicate vocabulary piece: " + pieces_[i]);
        }
    }
}

const std::string& Vocabulary::piece(std::int32_t id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= pieces_.size()) {
        throw std::out_of_range("token id " + std::to_string(id) + " outside vocabulary of size " +
                                std::to_string(pieces_.size()));
    }
    return pieces_[static_cast<std::size_t>(id)];
}

std::int32_t Vocabulary::id_of(std::string_view piece) const {
    auto it = index_.find(std::string(piece));
    return it == index_.end() ? -1 : it->second;
}

void Vocabulary::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write vocabulary: " + path);
    for (const auto& p : pieces_) out << p << '\n';
    if (!out) throw std::runtime_error("cannot write vocabulary: " + path);
}

Vocabulary Vocabulary::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read vocabulary: " + path);
    std::vector<std::string> pieces;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        pieces.push_back(line);
    }
    return Vocabulary(std::move(pieces));
}

std::string Vocabulary::content_hash() const {
    std::uint64_t h = 1469598103934665603ULL;
    for (const auto& p : pieces_) {
        for (unsigned char c : p) {
            h ^= c;
            h *= 1099511628211ULL;
        }
        h ^= '\n';
        h *= 1099511628211ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::vector<std::string> pre_tokenize(std::string_view text) {
    std::vector<std::string> out;
    for (auto w : split_ws(text)) {
        std::string cur;
        for (char c : w) {
            if (c == '.') {
                if (!cur.empty()) out.push_back(std::move(cur));
                cur.clear();
                out.emplace_back(".");
            } else {
                cur += c;
            }
        }
        if (!cur.empty()) out.push_back(std::move(cur));
    }
    return out;
}

Vocabulary train_wordpiece(const std::vector<Caption>& corpus, std::size_t max_size) {
    if (corpus.empty()) throw std::invalid_argument("train_wordpiece: corpus is empty");

    std::map<std::string, std::uint64_t> word_freq;
    for (const auto& c : corpus)
        for (auto& w : pre_tokenize(c)) ++word_freq[w];

    // Each word as its current symbol sequence; continuation symbols carry "##".
    std::vector<std::pair<std::vector<std::string>, std::uint64_t>> splits;
    std::set<std::string> alphabet;
    for (const auto& [word, freq] : word_freq) {
        auto cps = code_points(word);
        std::vector<std::string> syms;
        for (std::size_t i = 0; i < cps.size(); ++i) {
            syms.push_back(i == 0 ? cps[i] : std::string(kContinuation) + cps[i]);
            alphabet.insert(syms.back());
        }
        splits.emplace_back(std::move(syms), freq);
    }

    std::vector<std::string> pieces = {"[PAD]", "[START]", "[STOP]", "[UNK]"};
    if (max_size < pieces.size() + alphabet.size()) {
        throw std::invalid_argument("train_wordpiece: max_size " + std::to_string(max_size) +
                                    " is smaller than specials + alphabet (" +
                                    std::to_string(pieces.size() + alphabet.size()) + ")");
    }
    std::set<std::string> present(alphabet.begin(), alphabet.end());
    pieces.insert(pieces.end(), alphabet.begin(), alphabet.end());

    using u128 = unsigned __int128;
    while (pieces.size() < max_size) {
        std::map<std::string, std::uint64_t> sym_freq;
        std::map<std::pair<std::string, std::string>, std::uint64_t> pair_freq;
        for (const auto& [syms, freq] : splits) {
            for (std::size_t i = 0; i < syms.size(); ++i) {
                sym_freq[syms[i]] += freq;
                if (i + 1 < syms.size()) pair_freq[{syms[i], syms[i + 1]}] += freq;
            }
        }
        if (pair_freq.empty()) break;

        // std::map iterates pairs lexicographically, so strict '>' keeps the smallest pair on ties.
        const std::pair<std::string, std::string>* best = nullptr;
        std::uint64_t best_pf = 0;
        u128 best_den = 1;
        for (const auto& [pair, pf] : pair_freq) {
            const u128 den = static_cast<u128>(sym_freq[pair.first]) * sym_freq[pair.second];
            if (!best || static_cast<u128>(pf) * best_den > static_cast<u128>(best_pf) * den) {
                best = &pair;
                best_pf = pf;
                best_den = den;
            }
        }
        const std::string left = best->first;
        const std::string right = best->second;
        const std::string merged =
            left + (is_continuation(right) ? right.substr(kContinuation.size()) : right);

        for (auto& [syms, freq] : splits) {
            std::vector<std::string> next;
            next.reserve(syms.size());
            for (std::size_t i = 0; i < syms.size(); ++i) {
                if (i + 1 < syms.size() && syms[i] == left && syms[i + 1] == right) {
                    next.push_back(merged);
                    ++i;
                } else {
                    next.push_back(syms[i]);
                }
            }
            syms = std::move(next);
        }
        if (present.insert(merged).second) pieces.push_back(merged);
    }
    return Vocabulary(std::move(pieces));
}

TokenSeq tokenize(std::string_view caption, const Vocabulary& vocab) {
    TokenSeq out{special::start};
    for (const auto& word : pre_tokenize(caption)) {
        auto cps = code_points(word);
        std::size_t start = 0;
        while (start < cps.size()) {
            std::int32_t found = -1;
            std::size_t found_end = start;
            std::string candidate = start > 0 ? std::string(kContinuation) : std::string();
            // Longest match: build the full remainder then shrink.
            std::vector<std::size_t> ends;
            for (std::size_t e = start; e < cps.size(); ++e) {
                candidate += cps[e];
                ends.push_back(candidate.size());
            }
            for (std::size_t n = ends.size(); n > 0; --n) {
                auto id = vocab.id_of(std::string_view(candidate).substr(0, ends[n - 1]));
                if (id >= 0) {
                    found = id;
                    found_end = start + n;
                    break;
                }
            }
            if (found < 0) {
                out.push_back(special::unk);
                ++start;
            } else {
                out.push_back(found);
                start = found_end;
            }
        }
    }
    out.push_back(special::stop);
    return out;
}

Caption detokenize(const TokenSeq& tokens, const Vocabulary& vocab) {
    std::vector<std::string> words;
    for (auto id : tokens) {
        const auto& p = vocab.piece(id);
        if (id < special::count) continue;
        if (is_continuation(p) && !words.empty()) {
            words.back() += p.substr(kContinuation.size());
        } else {
            words.push_back(p);
        }
    }
    std::string out;
    for (const auto& w : words) {
        if (w == ".") {
            out += '.';
            continue;
        }
        if (!out.empty()) out += ' ';
        out += w;
    }
    return out;
}

double caption_accuracy(std::string_view predicted, std::string_view truth) {
    auto p = split_ws(predicted);
    auto t = split_ws(truth);
    const auto longest = std::max(p.size(), t.size());
    if (longest == 0) return 1.0;
    const auto shortest = std::min(p.size(), t.size());
    std::size_t matches = 0;
    for (std::size_t i = 0; i < shortest; ++i)
        if (p[i] == t[i]) ++matches;
    return static_cast<double>(matches) / static_cast<double>(longest);
}

}  // namespace strata
