#include "plan_harvest/notation.hpp"

#include "plan_harvest/text.hpp"

#include <optional>

namespace plan_harvest {

namespace {

constexpr std::string_view kStopTag = "TEXT";

bool is_delimiter(char c) { return c == '(' || c == ')' || c == ','; }

// Offset of the first line that reads "TEXT", or text.size().
std::size_t stop_offset(std::string_view text) {
    std::size_t line_start = 0;
    while (line_start < text.size()) {
        auto nl = text.find('\n', line_start);
        const auto line_end = nl == std::string_view::npos ? text.size() : nl;
        if (text::trim(text.substr(line_start, line_end - line_start)) == kStopTag) {
            return line_start;
        }
        if (nl == std::string_view::npos) {
            break;
        }
        line_start = nl + 1;
    }
    return text.size();
}

class PlanParser {
public:
    explicit PlanParser(std::string_view text) : text_(text) {}

    ParseResult run() {
        while (true) {
            skip_space();
            if (pos_ >= text_.size()) {
                break;
            }
            if (is_delimiter(text_[pos_])) {
                junk(pos_, pos_ + 1);
                ++pos_;
                continue;
            }
            if (!action()) {
                break;
            }
        }
        flush_junk();
        return std::move(result_);
    }

private:
    void skip_space() {
        while (pos_ < text_.size()) {
            const auto w = text::whitespace_at(text_, pos_);
            if (w == 0) {
                return;
            }
            pos_ += w;
        }
    }

    // Reads one name token at pos_ and, if an argument list follows, an
    // action. Returns false when parsing must stop.
    bool action() {
        const auto start = pos_;
        while (pos_ < text_.size() && !is_delimiter(text_[pos_]) && !text::is_space_at(text_, pos_)) {
            ++pos_;
        }
        const auto name_end = pos_;

        auto open = name_end;
        while (open < text_.size() && (text_[open] == ' ' || text_[open] == '\t')) {
            ++open;
        }
        if (open >= text_.size() || text_[open] != '(') {
            junk(start, name_end);
            return true;
        }

        const auto close = text_.find_first_of("()", open + 1);
        if (close == std::string_view::npos || text_[close] == '(') {
            flush_junk();
            result_.diagnostics.truncated = true;
            result_.diagnostics.skipped_spans.push_back(
                {start, text_.size(), close == std::string_view::npos ? "unterminated action" : "nested parenthesis"});
            pos_ = text_.size();
            return false;
        }
        pos_ = close + 1;

        ActionInstance act;
        act.name = text::normalize_phrase(text_.substr(start, name_end - start));
        const auto body = text_.substr(open + 1, close - open - 1);
        if (!text::trim(body).empty()) {
            std::size_t from = 0;
            while (true) {
                const auto comma = body.find(',', from);
                const auto piece = body.substr(from, comma == std::string_view::npos ? body.npos : comma - from);
                auto arg = text::normalize_phrase(piece);
                if (arg.empty()) {
                    junk(start, pos_, "empty argument");
                    return true;
                }
                act.args.push_back(std::move(arg));
                if (comma == std::string_view::npos) {
                    break;
                }
                from = comma + 1;
            }
        }
        flush_junk();
        result_.plan.actions.push_back(std::move(act));
        return true;
    }

    void junk(std::size_t start, std::size_t end, const char* reason = "unparseable text") {
        if (pending_ && pending_->reason == reason) {
            pending_->end = end;
            return;
        }
        flush_junk();
        pending_ = SkippedSpan{start, end, reason};
    }

    void flush_junk() {
        if (pending_) {
            result_.diagnostics.skipped_spans.push_back(std::move(*pending_));
            pending_.reset();
        }
    }

    std::string_view text_;
    std::size_t pos_ = 0;
    std::optional<SkippedSpan> pending_;
    ParseResult result_;
};

} // namespace

ParseResult parse_plan(std::string_view text) {
    return PlanParser(text.substr(0, stop_offset(text))).run();
}

std::string render_action(const ActionInstance& action) {
    return action.name + "(" + text::join(action.args, ", ") + ")";
}

std::string render_plan(const Plan& plan) {
    std::string out;
    for (std::size_t i = 0; i < plan.actions.size(); ++i) {
        if (i != 0) {
            out.push_back(' ');
        }
        out += render_action(plan.actions[i]);
    }
    return out;
}

} // namespace plan_harvest
