#pragma once

#include <cmath>
#include <cstdlib>
#include <map>
#include <string>
#include <vector>

#include <httplib.h>
#ifdef res
#undef res  // glibc resolv.h (via httplib) leaks this macro; it breaks Eigen
#endif
#include <json.hpp>

#include "llm4ng/errors.hpp"
#include "llm4ng/hashing.hpp"
#include "llm4ng/tensor_io.hpp"
#include "llm4ng/text.hpp"

namespace llm4ng {

// Dense row-per-node representation. All providers L2-normalize rows (the
// candidate prefilter treats row dot products as cosines); all-zero rows
// stay zero.
struct EmbeddingMatrix {
  Matrix data;
  bool normalized = false;

  int rows() const { return static_cast<int>(data.rows()); }
  int dim() const { return static_cast<int>(data.cols()); }
};

enum class EmbedProvider { kFallback, kHttp };

inline EmbedProvider embed_provider_from_string(const std::string& s) {
  if (s == "fallback") return EmbedProvider::kFallback;
  if (s == "http") return EmbedProvider::kHttp;
  throw InvalidParameter("unknown embedding provider: " + s);
}

struct EmbedderConfig {
  EmbedProvider provider = EmbedProvider::kFallback;
  int dim = 4096;           // fallback only
  std::uint64_t seed = 0;   // fallback hashing salt
  std::string endpoint;     // http: LLM4NG_EMBED_API_BASE / LLM4NG_API_BASE if empty
  std::string model;        // http
};

// Signed feature hashing: token -> seeded bucket with +/-1 sign, weighted
// log(1 + term frequency), L2-normalized. Deterministic substitute for a
// sentence encoder.
inline Vector fallback_embed(const std::string& text, int dim, std::uint64_t seed) {
  if (dim < 8) throw InvalidParameter("embedding dim must be >= 8");
  Vector v = Vector::Zero(dim);
  std::map<std::string, int> tf;
  for (const auto& token : tokenize(text)) tf[token]++;
  for (const auto& [token, count] : tf) {
    const std::uint64_t h = hash64(token, seed);
    const auto bucket = static_cast<Eigen::Index>(h % static_cast<std::uint64_t>(dim));
    const double sign = (h >> 63) ? -1.0 : 1.0;
    v[bucket] += sign * std::log1p(static_cast<double>(count));
  }
  const double norm = v.norm();
  if (norm > 0.0) v /= norm;
  return v;
}

namespace detail {

inline void normalize_rows(Matrix& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    const double norm = m.row(i).norm();
    if (norm > 0.0) m.row(i) /= norm;
  }
}

inline std::pair<std::string, std::string> split_base_url(const std::string& base_url) {
  std::string rest = base_url;
  const auto scheme = rest.find("://");
  const std::size_t host_begin = scheme == std::string::npos ? 0 : scheme + 3;
  const auto slash = rest.find('/', host_begin);
  if (slash == std::string::npos) return {rest, ""};
  std::string prefix = rest.substr(slash);
  while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
  return {rest.substr(0, slash), prefix};
}

}  // namespace detail

// Embeddings-endpoint client (model + input strings -> float arrays).
// Sequential batches preserve input order.
class HttpEmbeddingClient {
 public:
  explicit HttpEmbeddingClient(std::string base_url = "", std::string api_key = "",
                               int max_attempts = 3, int batch_size = 64)
      : max_attempts_(max_attempts), batch_size_(batch_size) {
    if (base_url.empty()) {
      const char* env = std::getenv("LLM4NG_EMBED_API_BASE");
      if (!env) env = std::getenv("LLM4NG_API_BASE");
      if (!env) throw BackendUnavailable("LLM4NG_EMBED_API_BASE / LLM4NG_API_BASE not set");
      base_url = env;
    }
    if (api_key.empty()) {
      if (const char* env = std::getenv("LLM4NG_API_KEY")) api_key = env;
    }
    api_key_ = std::move(api_key);
    std::tie(host_, path_prefix_) = detail::split_base_url(base_url);
  }

  Matrix embed(const std::vector<std::string>& texts, const std::string& model) {
    std::vector<std::vector<double>> rows;
    rows.reserve(texts.size());
    for (std::size_t begin = 0; begin < texts.size(); begin += static_cast<std::size_t>(batch_size_)) {
      const std::size_t end = std::min(texts.size(), begin + static_cast<std::size_t>(batch_size_));
      fetch_batch(texts, begin, end, model, rows);
    }
    if (rows.empty()) return Matrix(0, 0);
    const std::size_t dim = rows.front().size();
    Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(dim));
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i].size() != dim) {
        throw DimensionMismatch("embedding row " + std::to_string(i) + " has dim " +
                                std::to_string(rows[i].size()) + ", expected " +
                                std::to_string(dim));
      }
      for (std::size_t j = 0; j < dim; ++j) {
        m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
      }
    }
    return m;
  }

 private:
  void fetch_batch(const std::vector<std::string>& texts, std::size_t begin,
                   std::size_t end, const std::string& model,
                   std::vector<std::vector<double>>& rows) {
    nlohmann::json input = nlohmann::json::array();
    for (std::size_t i = begin; i < end; ++i) input.push_back(texts[i]);
    const std::string body = nlohmann::json{{"model", model}, {"input", input}}.dump();

    httplib::Client client(host_);
    client.set_read_timeout(120, 0);
    httplib::Headers headers;
    if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);

    std::string last_error;
    for (int attempt = 0; attempt < max_attempts_; ++attempt) {
      auto res = client.Post(path_prefix_ + "/embeddings", headers, body, "application/json");
      if (!res) {
        last_error = "connection failed: " + httplib::to_string(res.error());
        continue;
      }
      if (res->status == 429 || res->status >= 500) {
        last_error = "status " + std::to_string(res->status);
        continue;
      }
      if (res->status != 200) {
        throw BackendUnavailable("embeddings endpoint returned status " +
                                 std::to_string(res->status) + ": " + res->body);
      }
      auto j = nlohmann::json::parse(res->body, nullptr, false);
      if (j.is_discarded() || !j.contains("data") || !j["data"].is_array() ||
          j["data"].size() != end - begin) {
        throw BackendUnavailable("unexpected embeddings response");
      }
      for (const auto& item : j["data"]) {
        rows.push_back(item.at("embedding").get<std::vector<double>>());
      }
      return;
    }
    throw BackendUnavailable("embeddings endpoint unreachable after " +
                             std::to_string(max_attempts_) + " attempts (" +
                             last_error + ")");
  }

  std::string host_;
  std::string path_prefix_;
  std::string api_key_;
  int max_attempts_;
  int batch_size_;
};

// One row per input text, in order, L2-normalized.
inline EmbeddingMatrix embed_texts(const std::vector<std::string>& texts,
                                   const EmbedderConfig& config) {
  EmbeddingMatrix out;
  if (config.provider == EmbedProvider::kFallback) {
    if (config.dim < 8) throw InvalidParameter("embedding dim must be >= 8");
    out.data = Matrix::Zero(static_cast<Eigen::Index>(texts.size()), config.dim);
    for (std::size_t i = 0; i < texts.size(); ++i) {
      out.data.row(static_cast<Eigen::Index>(i)) =
          fallback_embed(texts[i], config.dim, config.seed).transpose();
    }
  } else {
    HttpEmbeddingClient client(config.endpoint);
    out.data = client.embed(texts, config.model);
    detail::normalize_rows(out.data);
  }
  out.normalized = true;
  return out;
}

// Row concatenation: raw rows first, generated rows after, matching the
// graph's id layout.
inline EmbeddingMatrix assemble_representations(const EmbeddingMatrix& raw,
                                                const EmbeddingMatrix& generated) {
  if (generated.rows() == 0) return raw;
  if (raw.rows() == 0) return generated;
  if (raw.dim() != generated.dim()) {
    throw DimensionMismatch("raw dim " + std::to_string(raw.dim()) +
                            " != generated dim " + std::to_string(generated.dim()));
  }
  EmbeddingMatrix out;
  out.data.resize(raw.data.rows() + generated.data.rows(), raw.data.cols());
  out.data.topRows(raw.data.rows()) = raw.data;
  out.data.bottomRows(generated.data.rows()) = generated.data;
  out.normalized = raw.normalized && generated.normalized;
  return out;
}

// Binary layout: {rows, dim, flags} little-endian u64, then row-major f32,
// plus a provenance sidecar at path + ".json".
inline void save_embedding_matrix(const std::string& path, const EmbeddingMatrix& m,
                                  const nlohmann::json& provenance) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoFailure("cannot open for write: " + path);
  write_tensor_block(os, m.data, m.normalized ? tensor_flags::kNormalized : 0);
  write_text_file(path + ".json", provenance.dump(2) + "\n");
}

inline EmbeddingMatrix load_embedding_matrix(const std::string& path,
                                             nlohmann::json* provenance = nullptr) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoFailure("cannot open for read: " + path);
  std::uint64_t flags = 0;
  EmbeddingMatrix m;
  m.data = read_tensor_block(is, &flags);
  m.normalized = (flags & tensor_flags::kNormalized) != 0;
  if (provenance) {
    std::ifstream sidecar(path + ".json");
    if (sidecar) {
      *provenance = nlohmann::json::parse(sidecar, nullptr, false);
      if (provenance->is_discarded()) *provenance = nlohmann::json();
    }
  }
  return m;
}

}  // namespace llm4ng
