#include "kglm/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <sstream>

#include "kglm/errors.hpp"

namespace kglm {

namespace {

constexpr size_t kMaxWordChars = 100;

bool is_space(unsigned char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r'; }

bool is_punct(unsigned char c) {
    return c < 128 && std::ispunct(c);
}

std::string lower(const std::string& s) {
    std::string out = s;
    for (char& c : out) {
        if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
    }
    return out;
}

bool is_special_literal(const std::string& w) {
    const auto& sp = Vocabulary::specials();
    return std::find(sp.begin(), sp.end(), w) != sp.end();
}

}  // namespace

const std::vector<std::string>& Vocabulary::specials() {
    static const std::vector<std::string> kSpecials = {"[CLS]", "[SEP]", "[MASK]", "[PAD]",
                                                       "[UNK]"};
    return kSpecials;
}

Vocabulary::Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
    if (tokens_.size() < specials().size()) {
        throw ConfigError("vocabulary must contain at least the 5 special tokens");
    }
    for (size_t i = 0; i < specials().size(); ++i) {
        if (tokens_[i] != specials()[i]) {
            throw ConfigError("special token '" + specials()[i] + "' missing from index " +
                              std::to_string(i));
        }
    }
    for (size_t i = 0; i < tokens_.size(); ++i) {
        if (tokens_[i].empty()) throw ConfigError("empty token at index " + std::to_string(i));
        if (!index_.emplace(tokens_[i], static_cast<int32_t>(i)).second) {
            throw ConfigError("duplicate token '" + tokens_[i] + "'");
        }
    }
}

const std::string& Vocabulary::token(int32_t id) const {
    if (id < 0 || static_cast<size_t>(id) >= tokens_.size()) {
        throw LookupError("token id " + std::to_string(id) + " out of range");
    }
    return tokens_[static_cast<size_t>(id)];
}

int32_t Vocabulary::id(const std::string& token) const {
    auto it = index_.find(token);
    return it == index_.end() ? -1 : it->second;
}

void Vocabulary::save(const std::string& path) const {
    std::ofstream f(path);
    if (!f) throw Error("cannot write vocabulary file '" + path + "'");
    for (const auto& t : tokens_) f << t << '\n';
}

Vocabulary Vocabulary::load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ParseError("cannot open vocabulary file '" + path + "'");
    std::vector<std::string> tokens;
    std::string line;
    while (std::getline(f, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        tokens.push_back(line);
    }
    return Vocabulary(std::move(tokens));
}

std::vector<std::string> split_words(const std::string& text) {
    std::vector<std::string> words;
    std::string cur;
    size_t i = 0;
    while (i < text.size()) {
        // whitespace-delimited special literals stay intact
        if (text[i] == '[') {
            bool at_boundary = cur.empty() && (i == 0 || is_space(text[i - 1]));
            if (at_boundary) {
                size_t end = text.find(']', i);
                if (end != std::string::npos) {
                    std::string cand = text.substr(i, end - i + 1);
                    bool followed_ok = end + 1 == text.size() || is_space(text[end + 1]);
                    if (followed_ok && is_special_literal(cand)) {
                        words.push_back(cand);
                        i = end + 1;
                        continue;
                    }
                }
            }
        }
        unsigned char c = static_cast<unsigned char>(text[i]);
        if (is_space(c)) {
            if (!cur.empty()) {
                words.push_back(lower(cur));
                cur.clear();
            }
        } else if (is_punct(c)) {
            if (!cur.empty()) {
                words.push_back(lower(cur));
                cur.clear();
            }
            words.push_back(std::string(1, text[i]));
        } else {
            cur.push_back(text[i]);
        }
        ++i;
    }
    if (!cur.empty()) words.push_back(lower(cur));
    return words;
}

Vocabulary build_vocab(std::istream& stream, size_t max_size, size_t min_freq) {
    if (max_size < 6) {
        throw ConfigError("max_size must be >= 6 (5 specials plus at least one unit)");
    }
    std::map<std::string, uint64_t> word_freq;
    std::map<char, uint64_t> char_freq;
    std::string line;
    bool any = false;
    while (std::getline(stream, line)) {
        for (const std::string& w : split_words(line)) {
            if (is_special_literal(w)) continue;
            any = true;
            ++word_freq[w];
            for (char c : w) ++char_freq[c];
        }
    }
    if (!any) throw ConfigError("cannot build a vocabulary from an empty stream");

    // candidates: (frequency, token); char pieces carry the char's corpus count
    std::map<std::string, uint64_t> cand;
    for (const auto& [w, f] : word_freq) {
        if (f >= min_freq) cand[w] = std::max(cand[w], f);
    }
    for (const auto& [c, f] : char_freq) {
        std::string piece(1, c);
        cand[piece] = std::max(cand[piece], f);
        cand["##" + piece] = std::max(cand["##" + piece], f);
    }
    std::vector<std::pair<std::string, uint64_t>> ranked(cand.begin(), cand.end());
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });

    std::vector<std::string> tokens = Vocabulary::specials();
    for (const auto& [tok, f] : ranked) {
        if (tokens.size() >= max_size) break;
        tokens.push_back(tok);
    }
    return Vocabulary(std::move(tokens));
}

Vocabulary build_vocab(const std::string& text, size_t max_size, size_t min_freq) {
    std::istringstream s(text);
    return build_vocab(s, max_size, min_freq);
}

TokenizedText tokenize(const Vocabulary& v, const std::string& text) {
    TokenizedText out;
    int32_t word_id = 0;
    for (const std::string& w : split_words(text)) {
        if (is_special_literal(w)) {
            out.tokens.push_back(v.id(w));
            out.word_ids.push_back(kNoWord);
            out.is_special.push_back(1);
            continue;
        }
        if (w.size() > kMaxWordChars) {
            out.tokens.push_back(Vocabulary::kUnk);
            out.word_ids.push_back(word_id++);
            out.is_special.push_back(0);
            continue;
        }
        // greedy longest match
        std::vector<int32_t> pieces;
        size_t start = 0;
        bool bad = false;
        while (start < w.size()) {
            size_t end = w.size();
            int32_t found = -1;
            while (start < end) {
                std::string sub = w.substr(start, end - start);
                if (start > 0) sub = "##" + sub;
                int32_t id = v.id(sub);
                if (id >= 0) {
                    found = id;
                    break;
                }
                --end;
            }
            if (found < 0) {
                bad = true;
                break;
            }
            pieces.push_back(found);
            start = end;
        }
        if (bad) {
            out.tokens.push_back(Vocabulary::kUnk);
            out.word_ids.push_back(word_id);
            out.is_special.push_back(0);
        } else {
            for (int32_t id : pieces) {
                out.tokens.push_back(id);
                out.word_ids.push_back(word_id);
                out.is_special.push_back(0);
            }
        }
        ++word_id;
    }
    return out;
}

std::string detokenize(const Vocabulary& v, const std::vector<int32_t>& tokens) {
    std::string out;
    for (int32_t id : tokens) {
        const std::string& t = v.token(id);  // throws on out-of-range
        if (t.size() > 2 && t[0] == '#' && t[1] == '#' && !out.empty() && out.back() != ' ') {
            out += t.substr(2);
        } else {
            if (!out.empty()) out += ' ';
            out += t;
        }
    }
    return out;
}

}  // namespace kglm
