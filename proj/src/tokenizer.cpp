#include "medart/tokenizer.hpp"

#include <cctype>
#include <stdexcept>

namespace medart {

std::vector<std::string> Tokenizer::tokenize(std::string_view text) const {
    std::vector<std::string> out;
    for (auto [off, len] : spans(text)) out.emplace_back(text.substr(off, len));
    return out;
}

std::string Tokenizer::truncate(std::string_view text, size_t max_tokens) const {
    auto sp = spans(text);
    if (sp.size() <= max_tokens) return std::string(text);
    if (max_tokens == 0) return {};
    const auto& last = sp[max_tokens - 1];
    return std::string(text.substr(0, last.first + last.second));
}

std::vector<std::pair<size_t, size_t>> WordPunctTokenizer::spans(std::string_view text) const {
    std::vector<std::pair<size_t, size_t>> out;
    size_t i = 0;
    const size_t n = text.size();
    while (i < n) {
        const auto c = static_cast<unsigned char>(text[i]);
        if (std::isspace(c)) {
            ++i;
        } else if (std::isalnum(c) || c >= 0x80) {
            // UTF-8 continuation bytes stay glued to the word they belong to.
            size_t j = i;
            while (j < n) {
                const auto d = static_cast<unsigned char>(text[j]);
                if (!(std::isalnum(d) || d >= 0x80)) break;
                ++j;
            }
            out.emplace_back(i, j - i);
            i = j;
        } else {
            out.emplace_back(i, 1);
            ++i;
        }
    }
    return out;
}

std::unique_ptr<Tokenizer> make_tokenizer(const std::string& id) {
    if (id == "word-punct-v1") return std::make_unique<WordPunctTokenizer>();
    throw std::invalid_argument("unknown tokenizer id: " + id);
}

}  // namespace medart
