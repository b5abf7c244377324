#pragma once

#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "ou/common.hpp"

namespace ou {

// Closed word-level vocabulary. Token ids are dense 0..size-1 in insertion
// order, so a vocabulary built deterministically hashes deterministically.
class Vocabulary {
public:
    static constexpr const char* kBos = "<bos>";
    static constexpr const char* kEos = "<eos>";
    static constexpr const char* kAnswerSep = "<a>";

    int add(const std::string& token) {
        auto it = index_.find(token);
        if (it != index_.end()) return it->second;
        int id = static_cast<int>(tokens_.size());
        tokens_.push_back(token);
        index_.emplace(token, id);
        return id;
    }

    bool contains(const std::string& token) const { return index_.count(token) > 0; }

    int encode(const std::string& token) const {
        auto it = index_.find(token);
        if (it == index_.end()) throw InputError("token not in vocabulary: '" + token + "'");
        return it->second;
    }

    const std::string& decode(int id) const {
        if (id < 0 || id >= size()) throw InputError("token id out of range: " + std::to_string(id));
        return tokens_[static_cast<size_t>(id)];
    }

    // Lowercases and strips punctuation, then splits on whitespace.
    std::vector<int> encode_text(const std::string& text) const {
        std::vector<int> out;
        for (const auto& w : normalize_words(text)) out.push_back(encode(w));
        return out;
    }

    std::string decode_seq(const std::vector<int>& ids) const {
        std::string out;
        for (size_t i = 0; i < ids.size(); ++i) {
            if (i) out += ' ';
            out += decode(ids[i]);
        }
        return out;
    }

    static std::vector<std::string> normalize_words(const std::string& text) {
        std::string cleaned;
        cleaned.reserve(text.size());
        for (char c : text) {
            if (c >= 'A' && c <= 'Z') {
                cleaned += static_cast<char>(c - 'A' + 'a');
            } else if ((c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '_' || c == '<' || c == '>') {
                cleaned += c;
            } else {
                cleaned += ' ';
            }
        }
        std::vector<std::string> words;
        std::istringstream ss(cleaned);
        std::string w;
        while (ss >> w) words.push_back(w);
        return words;
    }

    int size() const { return static_cast<int>(tokens_.size()); }
    const std::vector<std::string>& tokens() const { return tokens_; }

    int bos_id() const { return encode(kBos); }
    int eos_id() const { return encode(kEos); }
    int answer_sep_id() const { return encode(kAnswerSep); }

    uint64_t hash() const {
        uint64_t h = 0xcbf29ce484222325ull;
        for (const auto& t : tokens_) {
            h = fnv1a(t, h);
            h = fnv1a("\n", h);
        }
        return h;
    }

private:
    std::vector<std::string> tokens_;
    std::map<std::string, int> index_;
};

}  // namespace ou
