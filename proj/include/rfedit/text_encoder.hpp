#pragma once

#include <algorithm>
#include <cctype>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "rfedit/tensor.hpp"

namespace rfedit {

// Fixed word-level vocabulary. Id 0 is the null token (empty prompt), id 1 is
// unknown; real words start at 2. Order is part of the checkpoint contract.
struct Vocabulary {
    static constexpr int kNullId = 0;
    static constexpr int kUnkId = 1;

    std::vector<std::string> tokens;
    std::unordered_map<std::string, int> index;

    static Vocabulary from_words(const std::vector<std::string>& words) {
        Vocabulary v;
        v.tokens = {"<null>", "<unk>"};
        for (const auto& w : words) v.tokens.push_back(w);
        v.rebuild_index();
        return v;
    }

    // Restores a vocabulary whose token list already includes the reserved
    // entries (checkpoint load path).
    static Vocabulary from_tokens(std::vector<std::string> tokens) {
        if (tokens.size() < 2 || tokens[0] != "<null>" || tokens[1] != "<unk>")
            throw std::invalid_argument("vocabulary missing reserved tokens");
        Vocabulary v;
        v.tokens = std::move(tokens);
        v.rebuild_index();
        return v;
    }

    void rebuild_index() {
        index.clear();
        for (size_t i = 2; i < tokens.size(); ++i) {
            if (!index.emplace(tokens[i], static_cast<int>(i)).second)
                throw std::invalid_argument("duplicate vocabulary word: " + tokens[i]);
        }
    }

    int size() const { return static_cast<int>(tokens.size()); }

    int lookup(const std::string& word) const {
        auto it = index.find(word);
        return it == index.end() ? kUnkId : it->second;
    }

    // Captions are drawn from the synthetic corpus: colors, shapes, glue words.
    static Vocabulary default_vocab() {
        return from_words({"a", "red", "green", "blue", "circle", "square"});
    }
};

// Lowercase + whitespace split. The empty prompt maps to the single null
// token so unconditional prediction goes through the same code path.
inline std::vector<int> tokenize(const Vocabulary& vocab, const std::string& prompt) {
    std::vector<int> ids;
    std::string word;
    auto flush = [&] {
        if (!word.empty()) {
            ids.push_back(vocab.lookup(word));
            word.clear();
        }
    };
    for (char c : prompt) {
        if (std::isspace(static_cast<unsigned char>(c)))
            flush();
        else
            word.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
    flush();
    if (ids.empty()) ids.push_back(Vocabulary::kNullId);
    return ids;
}

// Output of the text encoder: per-token context plus a pooled summary.
template <typename T>
struct PromptEmbeddingT {
    std::vector<int> token_ids;
    TensorT<T> ctxt;  // [num_tokens, d_ctxt]
    TensorT<T> pool;  // [d_pool]
};

using PromptEmbedding = PromptEmbeddingT<float>;

}  // namespace rfedit
