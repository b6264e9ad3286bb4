#include "siri/prompts.hpp"

#include "siri/errors.hpp"
#include "siri/util.hpp"

#include <filesystem>
#include <optional>
#include <set>
#include <stdexcept>

namespace siri {

namespace {

bool is_name_char(char c) { return (c >= 'a' && c <= 'z') || c == '_'; }

// Returns the tag body ("name", "#name" or "/name") when `pos` opens a tag.
std::optional<std::string> tag_at(const std::string& s, std::size_t pos, std::size_t& end) {
    if (s[pos] != '{') return std::nullopt;
    std::size_t i = pos + 1;
    std::string tag;
    if (i < s.size() && (s[i] == '#' || s[i] == '/')) tag.push_back(s[i++]);
    const std::size_t name_start = i;
    while (i < s.size() && is_name_char(s[i])) ++i;
    if (i == name_start || i >= s.size() || s[i] != '}') return std::nullopt;
    tag += s.substr(name_start, i - name_start);
    end = i + 1;
    return tag;
}

}  // namespace

PromptTemplate::PromptTemplate(std::string source) : source_(std::move(source)) {
    std::vector<std::vector<Node>*> stack{&nodes_};
    std::vector<std::string> open;
    std::string text;
    auto flush = [&] {
        if (!text.empty()) {
            stack.back()->push_back({Node::Kind::text, std::move(text), {}});
            text.clear();
        }
    };
    std::size_t i = 0;
    while (i < source_.size()) {
        std::size_t end = 0;
        auto tag = tag_at(source_, i, end);
        if (!tag) {
            text.push_back(source_[i++]);
            continue;
        }
        flush();
        if ((*tag)[0] == '#') {
            auto name = tag->substr(1);
            stack.back()->push_back({Node::Kind::section, name, {}});
            stack.push_back(&stack.back()->back().children);
            open.push_back(name);
        } else if ((*tag)[0] == '/') {
            auto name = tag->substr(1);
            if (open.empty() || open.back() != name)
                throw std::invalid_argument("template closes section '" + name + "' that is not open");
            open.pop_back();
            stack.pop_back();
        } else {
            stack.back()->push_back({Node::Kind::var, *tag, {}});
        }
        i = end;
    }
    flush();
    if (!open.empty()) throw std::invalid_argument("template section '" + open.back() + "' is never closed");
}

void PromptTemplate::render_nodes(const std::vector<Node>& nodes, const Vars& vars, std::string& out) {
    for (const auto& node : nodes) {
        switch (node.kind) {
        case Node::Kind::text:
            out += node.value;
            break;
        case Node::Kind::var: {
            auto it = vars.find(node.value);
            if (it == vars.end()) throw std::invalid_argument("template variable '" + node.value + "' not supplied");
            out += it->second;
            break;
        }
        case Node::Kind::section: {
            auto it = vars.find(node.value);
            if (it != vars.end() && !it->second.empty()) render_nodes(node.children, vars, out);
            break;
        }
        }
    }
}

std::string PromptTemplate::render(const Vars& vars) const {
    std::string out;
    render_nodes(nodes_, vars, out);
    return out;
}

std::vector<std::string> PromptTemplate::variables() const {
    std::set<std::string> names;
    std::vector<const std::vector<Node>*> todo{&nodes_};
    while (!todo.empty()) {
        const auto* nodes = todo.back();
        todo.pop_back();
        for (const auto& n : *nodes) {
            if (n.kind == Node::Kind::text) continue;
            names.insert(n.value);
            if (n.kind == Node::Kind::section) todo.push_back(&n.children);
        }
    }
    return {names.begin(), names.end()};
}

// ---------------------------------------------------------------------------

TemplateSet TemplateSet::defaults() {
    TemplateSet t;
    t.question = PromptTemplate("{question} short question:");
    t.caption = PromptTemplate("a photo of :");
    t.issues = PromptTemplate(
        "You help answer a question about an image by proposing relevant issues. A relevant issue is a short "
        "question about the image whose answer helps decide which answer candidate is correct.\n"
        "{#caption}Scene: {caption}\n{/caption}"
        "Question: {question}\n"
        "{#candidates}Answer candidates: {candidates}\n{/candidates}"
        "Write {n_issues} relevant issues, one per line, each ending with a question mark.\n"
        "Relevant issues:");
    t.hypotheses = PromptTemplate(
        "Question: {question}\n"
        "Answer candidates: {candidates}\n"
        "Relevant issue: {issue}\n"
        "Answers to the relevant issue: {issue_candidates}\n"
        "For each numbered pair, write one fluent hypothesis stating how that answer to the relevant issue "
        "leads to that answer of the question.\n"
        "{pairs}\n"
        "Answer with one line per pair in the form \"<number>. <hypothesis>\".\n"
        "Hypotheses:");
    t.confidence = PromptTemplate(
        "{#caption}Scene: {caption}\n{/caption}"
        "For each numbered hypothesis, give a confidence score between 0 and 1 for how likely it holds "
        "in reality{#caption} in this scene{/caption}.\n"
        "{hypotheses}\n"
        "Answer with one line per hypothesis in the form \"<number>. <score>\".\n"
        "Scores:");
    t.context = PromptTemplate(
        "{#caption}This is a scene of \"{caption}\". In the above scene: {/caption}"
        "{hypothesis}{#confidence_word}, {confidence_word}{/confidence_word}. {question}");
    return t;
}

const std::vector<std::string>& TemplateSet::member_names() {
    static const std::vector<std::string> names{"question", "caption", "issues", "hypotheses", "confidence", "context"};
    return names;
}

PromptTemplate& TemplateSet::member(const std::string& name) {
    if (name == "question") return question;
    if (name == "caption") return caption;
    if (name == "issues") return issues;
    if (name == "hypotheses") return hypotheses;
    if (name == "confidence") return confidence;
    if (name == "context") return context;
    throw std::invalid_argument("unknown template '" + name + "'");
}

const PromptTemplate& TemplateSet::member(const std::string& name) const {
    return const_cast<TemplateSet*>(this)->member(name);
}

TemplateSet TemplateSet::load_dir(const std::string& dir) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) throw StorageError("template directory not found: " + dir);
    auto t = defaults();
    for (const auto& name : member_names()) {
        const auto path = fs::path(dir) / (name + ".txt");
        if (!fs::exists(path)) continue;
        auto text = read_file(path.string());
        if (!text.empty() && text.back() == '\n') text.pop_back();
        t.member(name) = PromptTemplate(std::move(text));
    }
    return t;
}

TemplateSet TemplateSet::from_json(const nlohmann::json& j) {
    auto t = defaults();
    if (j.is_null()) return t;
    if (!j.is_object()) throw SchemaError("templates must be an object of name -> text");
    for (const auto& [name, text] : j.items()) t.member(name) = PromptTemplate(text.get<std::string>());
    return t;
}

nlohmann::json TemplateSet::to_json() const {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& name : member_names()) j[name] = member(name).source();
    return j;
}

}  // namespace siri
