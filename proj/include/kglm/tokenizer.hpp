#pragma once

#include <cstdint>
#include <istream>
#include <string>
#include <unordered_map>
#include <vector>

namespace kglm {

// Word index sentinel for special tokens.
inline constexpr int32_t kNoWord = -1;

// Lowercasing subword vocabulary. Specials sit at fixed indices 0-4 so ids
// are stable across any vocabulary built on top of them.
class Vocabulary {
public:
    static constexpr int32_t kCls = 0;
    static constexpr int32_t kSep = 1;
    static constexpr int32_t kMask = 2;
    static constexpr int32_t kPad = 3;
    static constexpr int32_t kUnk = 4;
    static const std::vector<std::string>& specials();

    Vocabulary() = default;
    explicit Vocabulary(std::vector<std::string> tokens);

    size_t size() const { return tokens_.size(); }
    const std::string& token(int32_t id) const;
    int32_t id(const std::string& token) const;  // -1 when absent
    bool is_special(int32_t id) const { return id >= 0 && id <= 4; }

    void save(const std::string& path) const;
    static Vocabulary load(const std::string& path);

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int32_t> index_;
};

struct TokenizedText {
    std::vector<int32_t> tokens;
    std::vector<int32_t> word_ids;  // kNoWord at specials; continuations share
    std::vector<uint8_t> is_special;

    size_t size() const { return tokens.size(); }
};

// Whole words seen at least min_freq times, plus single-character fallback
// pieces ("c" and "##c") so tokenize stays total. Frequency-ranked, truncated
// to max_size including the 5 specials.
Vocabulary build_vocab(std::istream& stream, size_t max_size, size_t min_freq);
Vocabulary build_vocab(const std::string& text, size_t max_size, size_t min_freq);

// Lowercase, split on whitespace and punctuation (punctuation becomes its own
// word), then greedy longest-match subword segmentation. Words with no match
// become a single [UNK]. Whitespace-delimited special literals ([CLS], ...)
// pass through unsplit. Total: never throws.
TokenizedText tokenize(const Vocabulary& v, const std::string& text);

// Splitting stage of tokenize, exposed for vocabulary building: lowercased
// words with punctuation separated out.
std::vector<std::string> split_words(const std::string& text);

// Space-joined text with "##" continuations fused into their predecessor.
// Specials render literally. Throws LookupError on an out-of-range id.
std::string detokenize(const Vocabulary& v, const std::vector<int32_t>& tokens);

}  // namespace kglm
