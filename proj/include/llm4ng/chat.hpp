#pragma once

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#ifdef res
#undef res  // glibc resolv.h (via httplib) leaks this macro; it breaks Eigen
#endif
#include <json.hpp>

#include "llm4ng/errors.hpp"
#include "llm4ng/hashing.hpp"
#include "llm4ng/prompt.hpp"
#include "llm4ng/rng.hpp"
#include "llm4ng/synthetic.hpp"

namespace llm4ng {

struct ChatMessage {
  std::string role;
  std::string content;
};

struct SamplingParams {
  std::string model = "mock-model";
  double temperature = 1.0;
  std::uint64_t seed = 0;  // consumed by deterministic backends only
};

// One completion request. `class_ids` lists, in order, the classes whose
// samples the completion is expected to contain (one entry for P1-style
// prompts, all classes for P4, M repeats for P5); offline backends use it
// to synthesize a matching completion, HTTP backends ignore it.
struct ChatRequest {
  std::vector<ChatMessage> messages;
  SamplingParams params;
  std::string template_id = "P1";
  std::vector<int> class_ids;
  int replicate = 0;
};

inline nlohmann::json chat_request_body(const ChatRequest& req) {
  nlohmann::json messages = nlohmann::json::array();
  for (const auto& m : req.messages) {
    messages.push_back({{"role", m.role}, {"content", m.content}});
  }
  return {{"model", req.params.model},
          {"messages", messages},
          {"temperature", req.params.temperature}};
}

// Chat-completion source with an instrumented call counter, so tests can
// assert that cached replays never reach a backend.
class ChatBackend {
 public:
  virtual ~ChatBackend() = default;
  virtual std::string name() const = 0;

  std::string complete(const ChatRequest& req) {
    ++calls_;
    return do_complete(req);
  }

  int calls() const { return calls_.load(); }
  void reset_calls() { calls_ = 0; }

 protected:
  virtual std::string do_complete(const ChatRequest& req) = 0;

 private:
  std::atomic<int> calls_{0};
};

// Deterministic pseudo-completion for one (class, replicate, seed) triple:
// "Title: ... Abstract: ..." with tokens drawn from the class vocabulary
// plus a little cross-class noise.
inline std::string mock_generate(int class_id, int replicate, std::uint64_t seed,
                                 const std::vector<std::string>& class_vocab,
                                 const std::vector<std::string>& noise_vocab = {},
                                 double noise_prob = 0.08) {
  if (class_vocab.empty()) throw InvalidParameter("class vocabulary is empty");
  const std::string salt = std::to_string(class_id) + "|" + std::to_string(replicate);
  Rng rng(hash64(salt, seed));

  auto draw = [&]() -> const std::string& {
    if (!noise_vocab.empty() && rng.next_bernoulli(noise_prob)) {
      return noise_vocab[rng.next_index(noise_vocab.size())];
    }
    return class_vocab[rng.next_index(class_vocab.size())];
  };

  std::string title;
  const int title_len = 4 + static_cast<int>(rng.next_index(4));
  for (int i = 0; i < title_len; ++i) {
    std::string word = draw();
    if (!word.empty()) word[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(word[0])));
    if (!title.empty()) title += ' ';
    title += word;
  }
  std::string abstract;
  const int abstract_len = 30 + static_cast<int>(rng.next_index(21));
  for (int i = 0; i < abstract_len; ++i) {
    if (!abstract.empty()) abstract += ' ';
    abstract += draw();
  }
  return "Title: " + title + ".\nAbstract: " + abstract + ".";
}

// Offline stand-in for the chat service. Holds per-class vocabularies and
// answers every request with a well-formed deterministic completion.
class MockChatBackend : public ChatBackend {
 public:
  explicit MockChatBackend(SynthVocabulary vocab, double noise_prob = 0.08)
      : vocab_(std::move(vocab)), noise_prob_(noise_prob) {
    for (std::size_t c = 0; c < vocab_.class_vocabs.size(); ++c) {
      noise_pools_.emplace_back();
      auto& pool = noise_pools_.back();
      pool.insert(pool.end(), vocab_.shared_vocab.begin(), vocab_.shared_vocab.end());
      for (std::size_t other = 0; other < vocab_.class_vocabs.size(); ++other) {
        if (other == c) continue;
        const auto& ov = vocab_.class_vocabs[other];
        pool.insert(pool.end(), ov.begin(), ov.end());
      }
    }
  }

  std::string name() const override { return "mock"; }

 protected:
  std::string do_complete(const ChatRequest& req) override {
    if (req.class_ids.empty()) {
      throw InvalidParameter("mock backend needs target class ids");
    }
    std::string out;
    std::vector<int> seen_count(vocab_.class_vocabs.size(), 0);
    for (int cid : req.class_ids) {
      if (cid < 0 || cid >= static_cast<int>(vocab_.class_vocabs.size())) {
        throw IndexOutOfRange("mock backend class id " + std::to_string(cid));
      }
      // Repeats of a class within one completion get consecutive replicate
      // slots, so P5's batched samples differ from each other.
      const int occurrences = [&] {
        int n = 0;
        for (int c : req.class_ids) n += (c == cid);
        return n;
      }();
      const int effective_replicate =
          req.replicate * occurrences + seen_count[static_cast<std::size_t>(cid)];
      seen_count[static_cast<std::size_t>(cid)]++;
      if (!out.empty()) out += "\n\n";
      out += mock_generate(cid, effective_replicate, req.params.seed,
                           vocab_.class_vocabs[static_cast<std::size_t>(cid)],
                           noise_pools_[static_cast<std::size_t>(cid)], noise_prob_);
    }
    return out;
  }

 private:
  SynthVocabulary vocab_;
  std::vector<std::vector<std::string>> noise_pools_;
  double noise_prob_;
};

// Chat-completions HTTP client. Base URL and API key come from the
// environment (LLM4NG_API_BASE, LLM4NG_API_KEY); plain-HTTP endpoints only,
// so point it at a local server or proxy.
class HttpChatBackend : public ChatBackend {
 public:
  explicit HttpChatBackend(std::string base_url = "", std::string api_key = "",
                           int max_attempts = 3)
      : max_attempts_(max_attempts) {
    if (base_url.empty()) {
      const char* env = std::getenv("LLM4NG_API_BASE");
      if (!env) throw BackendUnavailable("LLM4NG_API_BASE not set");
      base_url = env;
    }
    if (api_key.empty()) {
      if (const char* env = std::getenv("LLM4NG_API_KEY")) api_key = env;
    }
    api_key_ = std::move(api_key);

    // Split "http://host:port/prefix" into client target and path prefix.
    std::string rest = base_url;
    const auto scheme = rest.find("://");
    std::size_t host_begin = scheme == std::string::npos ? 0 : scheme + 3;
    const auto slash = rest.find('/', host_begin);
    if (slash == std::string::npos) {
      host_ = rest;
    } else {
      host_ = rest.substr(0, slash);
      path_prefix_ = rest.substr(slash);
      while (!path_prefix_.empty() && path_prefix_.back() == '/') path_prefix_.pop_back();
    }
  }

  std::string name() const override { return "http"; }

 protected:
  std::string do_complete(const ChatRequest& req) override {
    const std::string body = chat_request_body(req).dump();
    httplib::Client client(host_);
    client.set_read_timeout(120, 0);
    httplib::Headers headers;
    if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);

    std::string last_error;
    for (int attempt = 0; attempt < max_attempts_; ++attempt) {
      if (attempt > 0) {
        std::this_thread::sleep_for(std::chrono::milliseconds(200 * attempt));
      }
      auto res = client.Post(path_prefix_ + "/chat/completions", headers, body,
                             "application/json");
      if (!res) {
        last_error = "connection failed: " + httplib::to_string(res.error());
        continue;
      }
      if (res->status == 429 || res->status >= 500) {
        last_error = "status " + std::to_string(res->status);
        continue;
      }
      if (res->status != 200) {
        throw BackendUnavailable("chat endpoint returned status " +
                                 std::to_string(res->status) + ": " + res->body);
      }
      auto j = nlohmann::json::parse(res->body, nullptr, false);
      if (j.is_discarded() || !j.contains("choices") || j["choices"].empty() ||
          !j["choices"][0].contains("message")) {
        throw BackendUnavailable("unexpected chat response: " + res->body);
      }
      return j["choices"][0]["message"]["content"].get<std::string>();
    }
    throw BackendUnavailable("chat endpoint unreachable after " +
                             std::to_string(max_attempts_) + " attempts (" +
                             last_error + ")");
  }

 private:
  std::string host_;
  std::string path_prefix_;
  std::string api_key_;
  int max_attempts_;
};

}  // namespace llm4ng
