#pragma once

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace plan_harvest {

/// One action in functional notation: `name(arg, arg, ...)`.
///
/// Names and arguments are stored normalized (lowercase, trimmed, inner
/// whitespace collapsed). `sentence_index` points back at the source sentence
/// when the annotation provides it.
struct ActionInstance {
    std::string name;
    std::vector<std::string> args;
    std::optional<std::size_t> sentence_index;

    bool operator==(const ActionInstance&) const = default;
};

enum class SlotKind { Essential, Optional, Exclusive };

std::string_view to_string(SlotKind kind);
std::optional<SlotKind> parse_slot_kind(std::string_view s);

/// One unit of ground truth. An exclusive slot holds two or more
/// alternatives; the other kinds hold exactly one action.
struct GoldSlot {
    SlotKind kind = SlotKind::Essential;
    std::vector<ActionInstance> members;
    std::size_t order_rank = 0;

    /// First member; used wherever a slot needs one representative.
    const ActionInstance& canonical() const { return members.front(); }

    bool operator==(const GoldSlot&) const = default;
};

struct AnnotatedText {
    std::string id;
    std::string dataset;
    std::vector<std::string> sentences;
    std::vector<GoldSlot> gold;
    // True when the source record carried order_rank values.
    bool explicit_order = false;

    bool operator==(const AnnotatedText&) const = default;
};

struct DatasetStats {
    std::size_t labeled_texts = 0;
    double action_name_rate = 0.0;
    double action_argument_rate = 0.0;
    std::size_t total_words = 0;
};

/// Raised for any corpus that fails to load or validate. `line` is 1-based
/// (0 when the problem is not tied to a line).
class CorpusError : public std::runtime_error {
public:
    CorpusError(std::string source, std::size_t line, std::string field, const std::string& what);

    const std::string& source() const noexcept { return source_; }
    std::size_t line() const noexcept { return line_; }
    const std::string& field() const noexcept { return field_; }

private:
    std::string source_;
    std::size_t line_;
    std::string field_;
};

std::vector<AnnotatedText> load_corpus(const std::string& path, std::string_view dataset_tag);

/// Same as load_corpus but from an open stream; `source` names it in errors.
std::vector<AnnotatedText> read_corpus(std::istream& in, std::string_view dataset_tag,
                                       const std::string& source = "<stream>");

void write_corpus(std::ostream& out, std::span<const AnnotatedText> corpus);

/// Throws CorpusError if `text` breaks an AnnotatedText invariant.
void validate(const AnnotatedText& text);

DatasetStats compute_stats(std::span<const AnnotatedText> corpus);

} // namespace plan_harvest
