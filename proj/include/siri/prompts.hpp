#pragma once

#include <nlohmann/json.hpp>

#include <map>
#include <string>
#include <vector>

namespace siri {

/**
 * Text template with named placeholders.
 *
 *   {name}            replaced by the value of `name`
 *   {#name}...{/name} kept only when `name` is non-empty
 *
 * Names are [a-z_]+. Any other brace is literal text. Substituted values are
 * never re-scanned, so user text containing braces is safe.
 */
class PromptTemplate {
public:
    using Vars = std::map<std::string, std::string>;

    PromptTemplate() = default;
    /// Throws std::invalid_argument on unbalanced sections.
    explicit PromptTemplate(std::string source);

    /// Throws std::invalid_argument if a referenced variable is missing from `vars`.
    std::string render(const Vars& vars) const;

    const std::string& source() const { return source_; }
    std::vector<std::string> variables() const;

private:
    struct Node {
        enum class Kind { text, var, section } kind = Kind::text;
        std::string value;  // literal text, or the variable name
        std::vector<Node> children;
    };

    static void render_nodes(const std::vector<Node>& nodes, const Vars& vars, std::string& out);

    std::string source_;
    std::vector<Node> nodes_;
};

/// The prompt set every agent draws from. Defaults are built in; each member
/// can be replaced from a file.
struct TemplateSet {
    PromptTemplate question;     // answer-candidate prompt, also used for re-answers
    PromptTemplate caption;
    PromptTemplate issues;
    PromptTemplate hypotheses;
    PromptTemplate confidence;
    PromptTemplate context;      // hypothesis-augmented question

    static TemplateSet defaults();
    /// Reads <name>.txt for each member from `dir`; missing files keep the default.
    static TemplateSet load_dir(const std::string& dir);
    /// Object of member-name -> template text overrides on top of defaults.
    static TemplateSet from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;

    static const std::vector<std::string>& member_names();
    PromptTemplate& member(const std::string& name);
    const PromptTemplate& member(const std::string& name) const;
};

}  // namespace siri
