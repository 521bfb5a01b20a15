#pragma once

#include <memory>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace medart {

/// Pluggable tokenizer. Token budgets and the text encoder's vocabulary
/// both go through this interface; id() is recorded in caption manifests.
class Tokenizer {
public:
    virtual ~Tokenizer() = default;
    /// Byte ranges [offset, offset+len) of each token in `text`.
    virtual std::vector<std::pair<size_t, size_t>> spans(std::string_view text) const = 0;
    virtual std::string id() const = 0;

    std::vector<std::string> tokenize(std::string_view text) const;
    size_t count(std::string_view text) const { return spans(text).size(); }
    /// Prefix of `text` holding at most max_tokens tokens.
    std::string truncate(std::string_view text, size_t max_tokens) const;
};

/// Runs of alphanumerics form one token; every other non-space byte is its own token.
class WordPunctTokenizer final : public Tokenizer {
public:
    std::vector<std::pair<size_t, size_t>> spans(std::string_view text) const override;
    std::string id() const override { return "word-punct-v1"; }
};

std::unique_ptr<Tokenizer> make_tokenizer(const std::string& id);

}  // namespace medart
