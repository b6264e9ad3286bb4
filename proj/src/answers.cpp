#include "siri/answers.hpp"

#include "siri/util.hpp"

#include <cctype>

namespace siri {

namespace {

bool is_terminal_punct(char c) {
    return c == '.' || c == ',' || c == '!' || c == '?' || c == ';' || c == ':';
}

std::string collapse_spaces(std::string_view s) {
    std::string out;
    bool pending = false;
    for (char c : s) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            pending = !out.empty();
            continue;
        }
        if (pending) out.push_back(' ');
        pending = false;
        out.push_back(c);
    }
    return out;
}

std::string normalize_once(std::string_view text) {
    std::string s = collapse_spaces(to_lower(trim(text)));
    while (!s.empty() && is_terminal_punct(s.back())) s.pop_back();
    s = collapse_spaces(s);
    for (std::string_view article : {"a ", "an ", "the "}) {
        if (s.size() > article.size() && s.compare(0, article.size(), article) == 0) {
            s.erase(0, article.size());
            break;
        }
    }
    return s;
}

}  // namespace

std::string normalize_answer(std::string_view text) {
    std::string current(text);
    for (;;) {
        auto next = normalize_once(current);
        if (next == current) return next;
        current = std::move(next);
    }
}

std::optional<std::size_t> match_choice(std::string_view text, const std::vector<std::string>& choices) {
    const auto norm = normalize_answer(text);
    for (std::size_t i = 0; i < choices.size(); ++i) {
        if (normalize_answer(choices[i]) == norm) return i;
    }
    std::string_view t = trim(text);
    while (!t.empty() && (t.front() == '(' || t.front() == '[')) t.remove_prefix(1);
    while (!t.empty() && (t.back() == ')' || t.back() == ']' || is_terminal_punct(t.back()))) t.remove_suffix(1);
    t = trim(t);
    if (t.size() == 1 && std::isalpha(static_cast<unsigned char>(t[0]))) {
        const auto idx = static_cast<std::size_t>(std::toupper(static_cast<unsigned char>(t[0])) - 'A');
        if (idx < choices.size()) return idx;
    }
    return std::nullopt;
}

std::string choice_letter(std::size_t index) { return std::string(1, static_cast<char>('A' + index)); }

}  // namespace siri
