#include "plan_harvest/corpus.hpp"

#include "plan_harvest/text.hpp"

#include <nlohmann/json.hpp>

#include <fstream>
#include <istream>
#include <ostream>
#include <set>
#include <unordered_set>

namespace plan_harvest {

using json = nlohmann::json;

namespace {

std::string describe(const std::string& source, std::size_t line, const std::string& field,
                     const std::string& what) {
    std::string msg = source;
    if (line != 0) {
        msg += ":" + std::to_string(line);
    }
    if (!field.empty()) {
        msg += ": field '" + field + "'";
    }
    return msg + ": " + what;
}

bool has_delimiter(std::string_view s) {
    return s.find_first_of("(),") != std::string_view::npos;
}

// Parses one record; errors are thrown as (field, message) and decorated with
// the line by the caller.
struct FieldError {
    std::string field;
    std::string message;
};

const json& require(const json& obj, const char* key, const std::string& path) {
    auto it = obj.find(key);
    if (it == obj.end()) {
        throw FieldError{path.empty() ? key : path + "." + key, "missing"};
    }
    return *it;
}

std::string require_string(const json& obj, const char* key, const std::string& path) {
    const auto& v = require(obj, key, path);
    if (!v.is_string()) {
        throw FieldError{path.empty() ? key : path + "." + key, "expected a string"};
    }
    return v.get<std::string>();
}

ActionInstance parse_member(const json& m, const std::string& path) {
    if (!m.is_object()) {
        throw FieldError{path, "expected an object"};
    }
    ActionInstance action;
    action.name = text::normalize_phrase(require_string(m, "name", path));

    const auto& args = require(m, "args", path);
    if (!args.is_array()) {
        throw FieldError{path + ".args", "expected an array"};
    }
    for (std::size_t i = 0; i < args.size(); ++i) {
        if (!args[i].is_string()) {
            throw FieldError{path + ".args[" + std::to_string(i) + "]", "expected a string"};
        }
        action.args.push_back(text::normalize_phrase(args[i].get<std::string>()));
    }

    if (auto it = m.find("sentence_index"); it != m.end() && !it->is_null()) {
        if (!it->is_number_unsigned()) {
            throw FieldError{path + ".sentence_index", "expected a non-negative integer or null"};
        }
        action.sentence_index = it->get<std::size_t>();
    }
    return action;
}

AnnotatedText parse_record(const json& rec) {
    if (!rec.is_object()) {
        throw FieldError{"", "record is not an object"};
    }
    AnnotatedText text;
    text.id = require_string(rec, "id", "");
    text.dataset = require_string(rec, "dataset", "");

    const auto& sentences = require(rec, "sentences", "");
    if (!sentences.is_array()) {
        throw FieldError{"sentences", "expected an array"};
    }
    for (std::size_t i = 0; i < sentences.size(); ++i) {
        if (!sentences[i].is_string()) {
            throw FieldError{"sentences[" + std::to_string(i) + "]", "expected a string"};
        }
        text.sentences.push_back(sentences[i].get<std::string>());
    }

    const auto& gold = require(rec, "gold", "");
    if (!gold.is_array()) {
        throw FieldError{"gold", "expected an array"};
    }
    std::size_t ranked = 0;
    for (std::size_t i = 0; i < gold.size(); ++i) {
        const std::string path = "gold[" + std::to_string(i) + "]";
        const auto& g = gold[i];
        if (!g.is_object()) {
            throw FieldError{path, "expected an object"};
        }
        GoldSlot slot;
        const auto kind = parse_slot_kind(require_string(g, "kind", path));
        if (!kind) {
            throw FieldError{path + ".kind", "expected essential, optional or exclusive"};
        }
        slot.kind = *kind;
        const auto& members = require(g, "members", path);
        if (!members.is_array()) {
            throw FieldError{path + ".members", "expected an array"};
        }
        for (std::size_t k = 0; k < members.size(); ++k) {
            slot.members.push_back(parse_member(members[k], path + ".members[" + std::to_string(k) + "]"));
        }
        slot.order_rank = i;
        if (auto it = g.find("order_rank"); it != g.end()) {
            if (!it->is_number_unsigned()) {
                throw FieldError{path + ".order_rank", "expected a non-negative integer"};
            }
            slot.order_rank = it->get<std::size_t>();
            ++ranked;
        }
        text.gold.push_back(std::move(slot));
    }
    if (ranked != 0 && ranked != gold.size()) {
        throw FieldError{"gold", "order_rank must be given for every slot or for none"};
    }
    text.explicit_order = ranked != 0;
    return text;
}

void check_action(const ActionInstance& a, const AnnotatedText& text, const std::string& path) {
    if (a.name.empty()) {
        throw FieldError{path + ".name", "empty action name"};
    }
    if (has_delimiter(a.name)) {
        throw FieldError{path + ".name", "action name contains '(' ')' or ','"};
    }
    for (std::size_t i = 0; i < a.args.size(); ++i) {
        const auto field = path + ".args[" + std::to_string(i) + "]";
        if (a.args[i].empty()) {
            throw FieldError{field, "empty argument"};
        }
        if (has_delimiter(a.args[i])) {
            throw FieldError{field, "argument contains '(' ')' or ','"};
        }
        if (text::trim(a.args[i]).size() != a.args[i].size()) {
            throw FieldError{field, "argument has surrounding whitespace"};
        }
    }
    if (text::trim(a.name).size() != a.name.size()) {
        throw FieldError{path + ".name", "action name has surrounding whitespace"};
    }
    if (a.sentence_index && *a.sentence_index >= text.sentences.size()) {
        throw FieldError{path + ".sentence_index", "sentence index " + std::to_string(*a.sentence_index) +
                                                       " out of range (" +
                                                       std::to_string(text.sentences.size()) + " sentences)"};
    }
}

void check_record(const AnnotatedText& text) {
    if (text.id.empty()) {
        throw FieldError{"id", "empty id"};
    }
    if (text.sentences.empty()) {
        throw FieldError{"sentences", "no sentences"};
    }
    for (std::size_t i = 0; i < text.sentences.size(); ++i) {
        if (text::trim(text.sentences[i]).empty()) {
            throw FieldError{"sentences[" + std::to_string(i) + "]", "blank sentence"};
        }
    }
    std::set<std::size_t> ranks;
    for (std::size_t i = 0; i < text.gold.size(); ++i) {
        const auto& slot = text.gold[i];
        const std::string path = "gold[" + std::to_string(i) + "]";
        if (slot.members.empty()) {
            throw FieldError{path + ".members", "no members"};
        }
        const bool exclusive = slot.kind == SlotKind::Exclusive;
        if (exclusive && slot.members.size() < 2) {
            throw FieldError{path + ".members", "exclusive slot needs at least two members"};
        }
        if (!exclusive && slot.members.size() != 1) {
            throw FieldError{path + ".members", "only exclusive slots may have several members"};
        }
        for (std::size_t k = 0; k < slot.members.size(); ++k) {
            check_action(slot.members[k], text, path + ".members[" + std::to_string(k) + "]");
        }
        if (!ranks.insert(slot.order_rank).second) {
            throw FieldError{path + ".order_rank", "duplicate order_rank " + std::to_string(slot.order_rank)};
        }
    }
    if (!ranks.empty() && *ranks.rbegin() != ranks.size() - 1) {
        throw FieldError{"gold", "order_rank values must be contiguous from 0"};
    }
}

json member_to_json(const ActionInstance& a) {
    json m;
    m["name"] = a.name;
    m["args"] = a.args;
    m["sentence_index"] = a.sentence_index ? json(*a.sentence_index) : json(nullptr);
    return m;
}

} // namespace

CorpusError::CorpusError(std::string source, std::size_t line, std::string field, const std::string& what)
    : std::runtime_error(describe(source, line, field, what)),
      source_(std::move(source)),
      line_(line),
      field_(std::move(field)) {}

std::string_view to_string(SlotKind kind) {
    switch (kind) {
    case SlotKind::Essential: return "essential";
    case SlotKind::Optional: return "optional";
    case SlotKind::Exclusive: return "exclusive";
    }
    return "essential";
}

std::optional<SlotKind> parse_slot_kind(std::string_view s) {
    if (s == "essential") return SlotKind::Essential;
    if (s == "optional") return SlotKind::Optional;
    if (s == "exclusive") return SlotKind::Exclusive;
    return std::nullopt;
}

void validate(const AnnotatedText& text) {
    try {
        check_record(text);
    } catch (const FieldError& e) {
        throw CorpusError(text.id.empty() ? "<record>" : text.id, 0, e.field, e.message);
    }
}

std::vector<AnnotatedText> read_corpus(std::istream& in, std::string_view dataset_tag, const std::string& source) {
    std::vector<AnnotatedText> corpus;
    std::unordered_set<std::string> ids;
    const auto tag = text::trim(dataset_tag);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (text::trim(line).empty()) {
            continue;
        }
        AnnotatedText rec;
        try {
            json parsed;
            try {
                parsed = json::parse(line);
            } catch (const json::exception& e) {
                throw FieldError{"", std::string("malformed record: ") + e.what()};
            }
            rec = parse_record(parsed);
            check_record(rec);
            if (!tag.empty() && text::trim(rec.dataset) != tag) {
                throw FieldError{"dataset", "record dataset '" + rec.dataset + "' does not match '" +
                                                std::string(tag) + "'"};
            }
        } catch (const FieldError& e) {
            throw CorpusError(source, lineno, e.field, e.message);
        }
        if (!ids.insert(rec.id).second) {
            throw CorpusError(source, lineno, "id", "duplicate id '" + rec.id + "'");
        }
        corpus.push_back(std::move(rec));
    }
    if (corpus.empty()) {
        throw CorpusError(source, 0, "", "corpus contains no records");
    }
    return corpus;
}

std::vector<AnnotatedText> load_corpus(const std::string& path, std::string_view dataset_tag) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw CorpusError(path, 0, "", "cannot open file");
    }
    return read_corpus(in, dataset_tag, path);
}

void write_corpus(std::ostream& out, std::span<const AnnotatedText> corpus) {
    for (const auto& t : corpus) {
        json rec;
        rec["id"] = t.id;
        rec["dataset"] = t.dataset;
        rec["sentences"] = t.sentences;
        json gold = json::array();
        for (const auto& slot : t.gold) {
            json g;
            g["kind"] = std::string(to_string(slot.kind));
            json members = json::array();
            for (const auto& m : slot.members) {
                members.push_back(member_to_json(m));
            }
            g["members"] = std::move(members);
            if (t.explicit_order) {
                g["order_rank"] = slot.order_rank;
            }
            gold.push_back(std::move(g));
        }
        rec["gold"] = std::move(gold);
        out << rec.dump() << '\n';
    }
}

DatasetStats compute_stats(std::span<const AnnotatedText> corpus) {
    if (corpus.empty()) {
        throw CorpusError("<corpus>", 0, "", "cannot compute statistics of an empty corpus");
    }
    std::size_t name_words = 0;
    std::size_t arg_words = 0;
    DatasetStats stats;
    stats.labeled_texts = corpus.size();
    for (const auto& t : corpus) {
        for (const auto& s : t.sentences) {
            stats.total_words += text::split_words(s).size();
        }
        for (const auto& slot : t.gold) {
            for (const auto& m : slot.members) {
                name_words += text::split_words(m.name).size();
                for (const auto& a : m.args) {
                    arg_words += text::split_words(a).size();
                }
            }
        }
    }
    if (stats.total_words != 0) {
        const auto total = static_cast<double>(stats.total_words);
        stats.action_name_rate = 100.0 * static_cast<double>(name_words) / total;
        stats.action_argument_rate = 100.0 * static_cast<double>(arg_words) / total;
    }
    return stats;
}

} // namespace plan_harvest
