#pragma once

#include <cmath>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "llm4ng/chat.hpp"
#include "llm4ng/errors.hpp"
#include "llm4ng/graph.hpp"
#include "llm4ng/hashing.hpp"
#include "llm4ng/prompt.hpp"
#include "llm4ng/sample.hpp"
#include "llm4ng/text.hpp"

namespace llm4ng {

struct CacheRecord {
  std::string key;
  std::string template_id;
  int class_id = -1;  // -1 for requests shared across classes (P4)
  std::string prompt;
  std::string model;
  nlohmann::json params;
  int replicate = 0;
  std::string completion;
  std::string title;
  std::string abstract;
  std::string request_body;
};

inline void to_json(nlohmann::json& j, const CacheRecord& r) {
  j = {{"key", r.key},           {"template_id", r.template_id},
       {"class_id", r.class_id}, {"prompt", r.prompt},
       {"model", r.model},       {"params", r.params},
       {"replicate", r.replicate}, {"completion", r.completion},
       {"title", r.title},       {"abstract", r.abstract},
       {"request_body", r.request_body}};
}

inline void from_json(const nlohmann::json& j, CacheRecord& r) {
  j.at("key").get_to(r.key);
  j.at("template_id").get_to(r.template_id);
  j.at("class_id").get_to(r.class_id);
  j.at("prompt").get_to(r.prompt);
  j.at("model").get_to(r.model);
  r.params = j.at("params");
  j.at("replicate").get_to(r.replicate);
  j.at("completion").get_to(r.completion);
  j.at("title").get_to(r.title);
  j.at("abstract").get_to(r.abstract);
  if (j.contains("request_body")) j.at("request_body").get_to(r.request_body);
}

// Append-only JSON-lines store of every request/response. A key maps to at
// most one completion; warm replays are served entirely from here.
class GenerationCache {
 public:
  GenerationCache() = default;

  explicit GenerationCache(const std::string& path) : path_(path) {
    std::ifstream is(path);
    if (is) {
      std::string line;
      while (std::getline(is, line)) {
        if (line.empty()) continue;
        auto j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded()) throw MalformedRecord(path + ": bad cache line");
        CacheRecord rec = j.get<CacheRecord>();
        const std::string key = rec.key;
        if (index_.count(key)) continue;  // keep the first occurrence
        index_[key] = records_.size();
        records_.push_back(std::move(rec));
      }
    }
  }

  static std::string make_key(const std::string& template_id,
                              const std::string& rendered_prompt,
                              const std::string& model,
                              const nlohmann::json& params, int replicate) {
    Sha1 h;
    h.update(template_id);
    h.update("\x1f");
    h.update(model);
    h.update("\x1f");
    h.update(params.dump());
    h.update("\x1f");
    h.update(std::to_string(replicate));
    h.update("\x1f");
    h.update(rendered_prompt);
    return h.hex_digest();
  }

  const CacheRecord* lookup(const std::string& key) const {
    std::lock_guard<std::mutex> lock(mutex_);
    auto it = index_.find(key);
    return it == index_.end() ? nullptr : &records_[it->second];
  }

  // Inserts (and persists) a record unless the key already exists; existing
  // records are never rewritten.
  bool insert(const CacheRecord& rec) {
    std::lock_guard<std::mutex> lock(mutex_);
    if (index_.count(rec.key)) return false;
    index_[rec.key] = records_.size();
    records_.push_back(rec);
    if (!path_.empty()) {
      std::ofstream os(path_, std::ios::app);
      if (!os) throw IoFailure("cannot append to cache " + path_);
      os << nlohmann::json(rec).dump() << '\n';
      if (!os) throw IoFailure("cache write failed: " + path_);
    }
    return true;
  }

  std::size_t size() const {
    std::lock_guard<std::mutex> lock(mutex_);
    return records_.size();
  }
  const std::vector<CacheRecord>& records() const { return records_; }
  const std::string& path() const { return path_; }

 private:
  std::string path_;
  std::vector<CacheRecord> records_;
  std::map<std::string, std::size_t> index_;
  mutable std::mutex mutex_;
};

struct GenerationConfig {
  TemplateId template_id = TemplateId::P1;
  SamplingParams params;
  bool dedup = false;                  // drop verbatim duplicate samples
  std::vector<std::string> exemplars;  // P3 exemplar texts for this class
};

namespace detail {

inline const char* kFormatReminder =
    "Please answer in the exact format \"Title: ...\" followed by \"Abstract: ...\".";

inline nlohmann::json sampling_params_json(const SamplingParams& p) {
  return {{"temperature", p.temperature}, {"seed", p.seed}};
}

inline std::string messages_fingerprint(const std::vector<ChatMessage>& messages) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& m : messages) j.push_back({{"role", m.role}, {"content", m.content}});
  return j.dump();
}

// Cache-or-call. Every backend response, well-formed or not, lands in the
// cache so replays are exact.
inline const CacheRecord& fetch_completion(const ChatRequest& req, int record_class_id,
                                           ChatBackend& backend, GenerationCache& cache) {
  const std::string fingerprint = messages_fingerprint(req.messages);
  const nlohmann::json params = sampling_params_json(req.params);
  const std::string key = GenerationCache::make_key(
      req.template_id, fingerprint, req.params.model, params, req.replicate);
  if (const CacheRecord* hit = cache.lookup(key)) return *hit;

  CacheRecord rec;
  rec.key = key;
  rec.template_id = req.template_id;
  rec.class_id = record_class_id;
  rec.prompt = req.messages.back().content;
  rec.model = req.params.model;
  rec.params = params;
  rec.replicate = req.replicate;
  rec.request_body = chat_request_body(req).dump();
  rec.completion = backend.complete(req);
  try {
    const auto parsed = parse_completion(rec.completion);
    rec.title = parsed.title;
    rec.abstract = parsed.abstract;
  } catch (const MalformedCompletion&) {
    // Recorded with empty title/abstract; the caller decides on a retry.
  }
  cache.insert(rec);
  return *cache.lookup(key);
}

// One automatic re-request with a format reminder appended; a second
// malformed completion surfaces the error.
inline std::vector<ParsedCompletion> completions_with_retry(
    ChatRequest req, int record_class_id, std::size_t min_pairs,
    ChatBackend& backend, GenerationCache& cache, std::string* cache_key_out) {
  const CacheRecord& first = fetch_completion(req, record_class_id, backend, cache);
  std::vector<ParsedCompletion> pairs;
  try {
    pairs = parse_completion_all(first.completion);
  } catch (const MalformedCompletion&) {
    pairs.clear();
  }
  if (pairs.size() >= min_pairs) {
    if (cache_key_out) *cache_key_out = first.key;
    return pairs;
  }

  ChatRequest retry = req;
  retry.messages.back().content += "\n";
  retry.messages.back().content += kFormatReminder;
  const CacheRecord& second = fetch_completion(retry, record_class_id, backend, cache);
  pairs = parse_completion_all(second.completion);
  if (pairs.size() < min_pairs) {
    throw MalformedCompletion("expected " + std::to_string(min_pairs) +
                              " Title/Abstract sections, found " +
                              std::to_string(pairs.size()));
  }
  if (cache_key_out) *cache_key_out = second.key;
  return pairs;
}

}  // namespace detail

// Exactly M labeled samples for one class. Completions come from the cache
// when warm, otherwise from the backend (and are then cached).
inline std::vector<GeneratedSample> generate_samples(int class_id, int m,
                                                     const LabelSet& labels,
                                                     const GenerationConfig& cfg,
                                                     ChatBackend& backend,
                                                     GenerationCache& cache) {
  if (m < 0) throw InvalidParameter("sample count must be >= 0");
  std::vector<GeneratedSample> out;
  if (m == 0) return out;
  const std::string class_text = labels.text(class_id);
  const std::string template_str = to_string(cfg.template_id);

  auto make_sample = [&](const ParsedCompletion& pair, int replicate,
                         const std::string& key) {
    GeneratedSample s;
    s.class_id = class_id;
    s.title = pair.title;
    s.abstract = pair.abstract;
    s.provenance = {template_str,       cfg.params.model, cfg.params.temperature,
                    cfg.params.seed,    replicate,        key};
    return s;
  };

  auto is_duplicate = [&](const ParsedCompletion& pair) {
    for (const auto& s : out) {
      if (s.title == pair.title && s.abstract == pair.abstract) return true;
    }
    return false;
  };

  if (cfg.template_id == TemplateId::P5) {
    PromptContext ctx;
    ctx.class_text = class_text;
    ctx.m = m;
    ChatRequest req;
    req.messages = {{"user", render_prompt(TemplateId::P5, ctx)}};
    req.params = cfg.params;
    req.template_id = template_str;
    req.class_ids.assign(static_cast<std::size_t>(m), class_id);
    req.replicate = 0;
    std::string key;
    const auto pairs = detail::completions_with_retry(
        req, class_id, static_cast<std::size_t>(m), backend, cache, &key);
    for (int i = 0; i < m; ++i) {
      const auto& pair = pairs[static_cast<std::size_t>(i)];
      if (cfg.dedup && is_duplicate(pair)) continue;
      out.push_back(make_sample(pair, i, key));
    }
    if (static_cast<int>(out.size()) < m) {
      throw MalformedCompletion("batch completion held only " +
                                std::to_string(out.size()) + " distinct samples");
    }
    return out;
  }

  const int max_attempts = cfg.dedup ? 4 * m + 4 : m;
  std::vector<ChatMessage> history;           // P6 conversation state
  std::vector<std::string> prior_titles;      // P6 rendered titles
  for (int replicate = 0; static_cast<int>(out.size()) < m; ++replicate) {
    if (replicate >= max_attempts) {
      throw MalformedCompletion("could not collect " + std::to_string(m) +
                                " distinct samples in " +
                                std::to_string(max_attempts) + " attempts");
    }
    PromptContext ctx;
    ctx.class_text = class_text;
    ctx.exemplars = cfg.exemplars;
    ctx.all_labels = labels.label_texts;
    ctx.prior_titles = prior_titles;
    const std::string prompt = render_prompt(cfg.template_id, ctx);

    ChatRequest req;
    req.messages = history;
    req.messages.push_back({"user", prompt});
    req.params = cfg.params;
    req.template_id = template_str;
    req.replicate = replicate;
    int record_class = class_id;
    std::size_t min_pairs = 1;
    if (cfg.template_id == TemplateId::P4) {
      // One request covers all classes; the cache key is class-independent,
      // so sibling classes replay the same completion.
      for (int c = 0; c < labels.num_classes(); ++c) req.class_ids.push_back(c);
      record_class = -1;
      min_pairs = static_cast<std::size_t>(labels.num_classes());
    } else {
      req.class_ids = {class_id};
    }

    std::string key;
    const auto pairs =
        detail::completions_with_retry(req, record_class, min_pairs, backend, cache, &key);
    const ParsedCompletion& pair =
        cfg.template_id == TemplateId::P4 ? pairs[static_cast<std::size_t>(class_id)]
                                          : pairs.front();

    if (cfg.template_id == TemplateId::P6) {
      history.push_back({"user", prompt});
      const CacheRecord* rec = cache.lookup(key);
      history.push_back({"assistant", rec ? rec->completion : ""});
      prior_titles.push_back(pair.title);
    }
    if (cfg.dedup && is_duplicate(pair)) continue;
    out.push_back(make_sample(pair, replicate, key));
  }
  return out;
}

// Distinctive per-class token pools mined from a labeled dataset, for
// driving the mock backend against real dataset files.
inline SynthVocabulary derive_class_vocabularies(const TextAttributedGraph& graph,
                                                 const LabelSet& labels,
                                                 int per_class = 60,
                                                 int shared_count = 40) {
  const int num_classes = labels.num_classes();
  std::map<std::string, std::vector<int>> counts;
  for (NodeId id = 0; id < graph.num_raw_nodes; ++id) {
    const auto& label = graph.labels[static_cast<std::size_t>(id)];
    if (!label) continue;
    for (const auto& token : tokenize(graph.texts[static_cast<std::size_t>(id)])) {
      auto& row = counts[token];
      if (row.empty()) row.assign(static_cast<std::size_t>(num_classes), 0);
      row[static_cast<std::size_t>(*label)]++;
    }
  }

  SynthVocabulary vocab;
  vocab.class_vocabs.resize(static_cast<std::size_t>(num_classes));
  std::map<std::string, bool> claimed;
  for (int c = 0; c < num_classes; ++c) {
    std::vector<std::pair<double, std::string>> scored;
    for (const auto& [token, row] : counts) {
      const int in_class = row[static_cast<std::size_t>(c)];
      if (in_class < 2) continue;
      int total = 0;
      for (int v : row) total += v;
      const double ratio = static_cast<double>(in_class) / static_cast<double>(total);
      scored.push_back({ratio * std::log(1.0 + in_class), token});
    }
    std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first > b.first;
      return a.second < b.second;
    });
    for (std::size_t i = 0; i < scored.size() && static_cast<int>(i) < per_class; ++i) {
      vocab.class_vocabs[static_cast<std::size_t>(c)].push_back(scored[i].second);
      claimed[scored[i].second] = true;
    }
    if (vocab.class_vocabs[static_cast<std::size_t>(c)].empty()) {
      throw InsufficientNodes("no vocabulary for class " + std::to_string(c));
    }
  }

  std::vector<std::pair<int, std::string>> by_total;
  for (const auto& [token, row] : counts) {
    if (claimed.count(token)) continue;
    int total = 0;
    for (int v : row) total += v;
    by_total.push_back({total, token});
  }
  std::sort(by_total.begin(), by_total.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  for (std::size_t i = 0; i < by_total.size() && static_cast<int>(i) < shared_count; ++i) {
    vocab.shared_vocab.push_back(by_total[i].second);
  }
  return vocab;
}

}  // namespace llm4ng
