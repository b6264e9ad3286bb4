#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace siri {

/**
 * Canonical form used for every answer comparison in the engine:
 * lowercase, outer whitespace and terminal punctuation stripped, internal
 * whitespace collapsed, leading articles ("a", "an", "the") dropped.
 * Idempotent.
 */
std::string normalize_answer(std::string_view text);

/// Index of the choice `text` names, by normalized choice text or by letter
/// ("B", "(b)", "B."). No fuzzy matching.
std::optional<std::size_t> match_choice(std::string_view text, const std::vector<std::string>& choices);

/// "A", "B", ... for a choice index.
std::string choice_letter(std::size_t index);

}  // namespace siri
