#pragma once

#include <cctype>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "llm4ng/errors.hpp"
#include "llm4ng/text.hpp"

namespace llm4ng {

// The six prompt forms. P1 is the default; P4 batches all classes into one
// request and is opt-in (it degrades when the class list outgrows the
// completion budget).
enum class TemplateId { P1, P2, P3, P4, P5, P6 };

inline std::string to_string(TemplateId id) {
  switch (id) {
    case TemplateId::P1: return "P1";
    case TemplateId::P2: return "P2";
    case TemplateId::P3: return "P3";
    case TemplateId::P4: return "P4";
    case TemplateId::P5: return "P5";
    case TemplateId::P6: return "P6";
  }
  throw InvalidParameter("unknown template id");
}

inline TemplateId template_from_string(std::string_view s) {
  if (s == "P1") return TemplateId::P1;
  if (s == "P2") return TemplateId::P2;
  if (s == "P3") return TemplateId::P3;
  if (s == "P4") return TemplateId::P4;
  if (s == "P5") return TemplateId::P5;
  if (s == "P6") return TemplateId::P6;
  throw InvalidParameter("unknown template id: " + std::string(s));
}

// Slot values for rendering. Which fields are required depends on the
// template; render_prompt throws MissingSlot when one is absent.
struct PromptContext {
  std::string class_text;                   // P1, P2, P3, P5, P6
  std::vector<std::string> exemplars;       // P3: two training-set samples
  std::vector<std::string> all_labels;      // P4: the full label list
  int m = 0;                                // P5: samples per request
  std::vector<std::string> prior_titles;    // P6: titles generated so far
};

namespace detail {

inline std::string join_labels(const std::vector<std::string>& labels) {
  std::string out;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (i > 0) out += (i + 1 == labels.size()) ? " and " : ", ";
    out += labels[i];
  }
  return out;
}

inline void require_class(const PromptContext& ctx) {
  if (ctx.class_text.empty()) throw MissingSlot("class text");
}

}  // namespace detail

// Render the (latest) user turn for a template. Pure: identical inputs give
// identical strings.
inline std::string render_prompt(TemplateId id, const PromptContext& ctx) {
  switch (id) {
    case TemplateId::P1:
      detail::require_class(ctx);
      return "Please generate a paper belonging to category " + ctx.class_text +
             ", including title and abstract.";
    case TemplateId::P2:
      detail::require_class(ctx);
      return "We want to generate a few nodes from graph-structured data where "
             "the nodes represent individual research papers and the edges "
             "represent citation relationships among the papers.\n"
             "Please generate a paper belonging to category " + ctx.class_text +
             ", including title and abstract.";
    case TemplateId::P3:
      detail::require_class(ctx);
      if (ctx.exemplars.size() < 2) {
        throw MissingSlot("P3 requires two exemplar papers, got " +
                          std::to_string(ctx.exemplars.size()));
      }
      return "Here are two papers belonging to category " + ctx.class_text +
             ", " + ctx.exemplars[0] + ", " + ctx.exemplars[1] +
             ". Please generate another paper belonging to category " +
             ctx.class_text + ", including title and abstract.";
    case TemplateId::P4:
      if (ctx.all_labels.empty()) throw MissingSlot("P4 requires the label list");
      return "We have some research paper topics, namely " +
             detail::join_labels(ctx.all_labels) +
             ".\nPlease generate a title and abstract for each of these topics.";
    case TemplateId::P5:
      detail::require_class(ctx);
      if (ctx.m < 1) throw MissingSlot("P5 requires the sample count");
      return "Please generate " + std::to_string(ctx.m) +
             " papers belonging to category " + ctx.class_text +
             ", including title and abstract.";
    case TemplateId::P6:
      detail::require_class(ctx);
      if (ctx.prior_titles.empty()) {
        return render_prompt(TemplateId::P1, ctx);
      } else {
        std::string titles;
        for (std::size_t i = 0; i < ctx.prior_titles.size(); ++i) {
          if (i > 0) titles += ",";
          titles += ctx.prior_titles[i];
        }
        return "The title of the paper you generated previously is " + titles +
               ". Please generate a paper belonging to category " +
               ctx.class_text +
               ", including title and abstract, which is different from the "
               "previous one you generated.";
      }
  }
  throw InvalidParameter("unknown template id");
}

namespace detail {

// Locates `word` used as a section marker: at a word boundary, followed by
// optional emphasis/space characters and then a colon. Returns the position
// right after the colon, or npos.
inline std::size_t find_marker(std::string_view text, std::string_view word,
                               std::size_t from, std::size_t* marker_begin) {
  const std::string lower = to_lower(text);
  const std::string target(word);
  std::size_t pos = from;
  while ((pos = lower.find(target, pos)) != std::string::npos) {
    const bool boundary =
        pos == 0 || !std::isalnum(static_cast<unsigned char>(lower[pos - 1]));
    std::size_t after = pos + target.size();
    while (after < text.size() &&
           (text[after] == '*' || text[after] == '_' || text[after] == ' ' ||
            text[after] == '\t')) {
      ++after;
    }
    if (boundary && after < text.size() && text[after] == ':') {
      if (marker_begin) *marker_begin = pos;
      return after + 1;
    }
    pos += target.size();
  }
  return std::string::npos;
}

inline std::string strip_emphasis(std::string_view s) {
  std::string t = trim(s);
  std::size_t begin = 0, end = t.size();
  while (begin < end && (t[begin] == '*' || t[begin] == '_' || t[begin] == '#')) ++begin;
  while (end > begin && (t[end - 1] == '*' || t[end - 1] == '_')) --end;
  return trim(std::string_view(t).substr(begin, end - begin));
}

}  // namespace detail

struct ParsedCompletion {
  std::string title;
  std::string abstract;
};

// Every "Title: ... Abstract: ..." section in order, tolerating markdown
// emphasis, case variation and leading numbering. Batch templates (P4, P5)
// pack several sections into one completion.
inline std::vector<ParsedCompletion> parse_completion_all(std::string_view text) {
  std::vector<ParsedCompletion> out;
  std::size_t cursor = 0;
  for (;;) {
    std::size_t title_begin = 0;
    const std::size_t title_at = detail::find_marker(text, "title", cursor, &title_begin);
    if (title_at == std::string::npos) break;
    std::size_t abstract_begin = 0;
    const std::size_t abstract_at =
        detail::find_marker(text, "abstract", title_at, &abstract_begin);
    if (abstract_at == std::string::npos) break;
    std::size_t next_title_begin = text.size();
    const std::size_t next_title_at =
        detail::find_marker(text, "title", abstract_at, &next_title_begin);
    ParsedCompletion parsed;
    parsed.title = detail::strip_emphasis(text.substr(title_at, abstract_begin - title_at));
    const std::size_t abstract_end =
        next_title_at == std::string::npos ? text.size() : next_title_begin;
    parsed.abstract = detail::strip_emphasis(text.substr(abstract_at, abstract_end - abstract_at));
    if (parsed.title.empty() || parsed.abstract.empty()) {
      throw MalformedCompletion("empty title or abstract section");
    }
    out.push_back(std::move(parsed));
    cursor = abstract_end;
  }
  return out;
}

// First title/abstract pair of a completion.
inline ParsedCompletion parse_completion(std::string_view text) {
  auto all = parse_completion_all(text);
  if (all.empty()) {
    throw MalformedCompletion("completion lacks Title:/Abstract: markers");
  }
  return all.front();
}

}  // namespace llm4ng
