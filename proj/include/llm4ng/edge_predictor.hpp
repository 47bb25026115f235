#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <set>
#include <vector>

#include "llm4ng/embedding.hpp"
#include "llm4ng/errors.hpp"
#include "llm4ng/graph.hpp"
#include "llm4ng/optim.hpp"
#include "llm4ng/rng.hpp"

namespace llm4ng {

// A gen-raw pair that survived the similarity prefilter.
struct EdgeCandidate {
  int gen_index = 0;
  NodeId raw_id = 0;
  double similarity = 0.0;
  std::optional<double> score;
};

struct LabeledPair {
  NodeId u = 0;
  NodeId v = 0;
  int label = 0;  // 1 = existing edge, 0 = sampled non-edge
};

// 2-layer perceptron on concatenated endpoint embeddings:
// input 2d -> hidden d (ReLU) -> 1 (sigmoid).
struct EdgePredictorParams {
  Matrix w1;  // 2d x d
  Vector b1;  // d
  Vector w2;  // d
  Vector b2;  // scalar kept as a 1-vector for the optimizer traversal

  template <class F>
  void for_each(F&& f) {
    f(w1);
    f(b1);
    f(w2);
    f(b2);
  }

  int input_dim() const { return static_cast<int>(w1.rows()) / 2; }
};

struct EdgePredictorConfig {
  double delta = 0.3;
  int top_k_multiplier = 10;  // k = multiplier * (M * num_classes)
  int epochs = 200;
  double learning_rate = 1e-2;
  double weight_decay = 0.0;
  std::uint64_t seed = 0;
};

// Exactly the gen x raw pairs whose dot product exceeds delta, ordered by
// (gen_index, raw_id). Rows must be unit-normalized so the dot product is
// the cosine.
inline std::vector<EdgeCandidate> prefilter_candidates(const EmbeddingMatrix& generated,
                                                       const EmbeddingMatrix& raw,
                                                       double delta) {
  if (generated.rows() == 0 || raw.rows() == 0) return {};
  if (generated.dim() != raw.dim()) {
    throw DimensionMismatch("generated dim " + std::to_string(generated.dim()) +
                            " != raw dim " + std::to_string(raw.dim()));
  }
  if (!generated.normalized || !raw.normalized) {
    throw InvalidParameter("prefilter requires normalized embeddings");
  }
  const Matrix sim = generated.data * raw.data.transpose();
  std::vector<EdgeCandidate> out;
  for (Eigen::Index g = 0; g < sim.rows(); ++g) {
    for (Eigen::Index r = 0; r < sim.cols(); ++r) {
      if (sim(g, r) > delta) {
        out.push_back({static_cast<int>(g), static_cast<NodeId>(r), sim(g, r), {}});
      }
    }
  }
  return out;
}

// All raw edges as positives plus an equal number of uniformly sampled
// distinct non-edges. Deterministic under seed.
inline std::vector<LabeledPair> build_link_training_set(const TextAttributedGraph& graph,
                                                        std::uint64_t seed) {
  const int n = graph.num_raw_nodes;
  std::vector<Edge> raw_edges;
  for (const auto& e : graph.edges) {
    if (e.first < n && e.second < n) raw_edges.push_back(e);
  }
  if (raw_edges.empty()) throw InvalidParameter("graph has no edges");

  const long long total_pairs = static_cast<long long>(n) * (n - 1) / 2;
  const long long num_edges = static_cast<long long>(raw_edges.size());
  if (total_pairs - num_edges < num_edges) {
    throw GraphTooDense("non-edge population " + std::to_string(total_pairs - num_edges) +
                        " < edge count " + std::to_string(num_edges));
  }

  std::vector<LabeledPair> pairs;
  pairs.reserve(2 * raw_edges.size());
  for (const auto& [u, v] : raw_edges) pairs.push_back({u, v, 1});

  Rng rng(seed);
  std::set<Edge> drawn;
  long long rejections = 0;
  while (static_cast<long long>(drawn.size()) < num_edges) {
    // Dense graphs make rejection sampling degenerate; fall back to
    // enumerating the complement once rejections pile up.
    if (rejections > 50 * num_edges + 1000) {
      std::vector<Edge> complement;
      for (NodeId u = 0; u < n; ++u) {
        for (NodeId v = u + 1; v < n; ++v) {
          if (!graph.has_edge(u, v) && !drawn.count({u, v})) complement.push_back({u, v});
        }
      }
      const auto need = static_cast<std::size_t>(num_edges) - drawn.size();
      for (const auto& e : rng.sample_without_replacement(complement, need)) {
        drawn.insert(e);
        pairs.push_back({e.first, e.second, 0});
      }
      break;
    }
    const auto u = static_cast<NodeId>(rng.next_index(static_cast<std::size_t>(n)));
    const auto v = static_cast<NodeId>(rng.next_index(static_cast<std::size_t>(n)));
    if (u == v) {
      ++rejections;
      continue;
    }
    const Edge e{std::min(u, v), std::max(u, v)};
    if (graph.has_edge(e.first, e.second) || !drawn.insert(e).second) {
      ++rejections;
      continue;
    }
    pairs.push_back({e.first, e.second, 0});
  }
  return pairs;
}

namespace detail {

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// Numerically stable binary cross-entropy from the logit.
inline double bce_from_logit(double z, double y) {
  return std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
}

inline Vector mlp_logits(const EdgePredictorParams& params, const Matrix& x) {
  Matrix a1 = (x * params.w1).rowwise() + params.b1.transpose();
  a1 = a1.cwiseMax(0.0);
  return (a1 * params.w2).array() + params.b2[0];
}

}  // namespace detail

// Mean of both concatenation orders; the graph is undirected, the MLP input
// is not.
inline double predict_pair(const EdgePredictorParams& params, const Vector& h_u,
                           const Vector& h_v) {
  const int d = params.input_dim();
  if (h_u.size() != d || h_v.size() != d) {
    throw DimensionMismatch("pair inputs must have dim " + std::to_string(d));
  }
  Matrix x(2, 2 * d);
  x.row(0) << h_u.transpose(), h_v.transpose();
  x.row(1) << h_v.transpose(), h_u.transpose();
  const Vector z = detail::mlp_logits(params, x);
  return 0.5 * (detail::sigmoid(z[0]) + detail::sigmoid(z[1]));
}

inline EdgePredictorParams init_edge_predictor(int dim, std::uint64_t seed) {
  EdgePredictorParams p;
  Rng rng(seed);
  const double limit1 = std::sqrt(6.0 / (3.0 * dim));  // fan_in 2d, fan_out d
  p.w1.resize(2 * dim, dim);
  for (Eigen::Index i = 0; i < p.w1.rows(); ++i) {
    for (Eigen::Index j = 0; j < p.w1.cols(); ++j) {
      p.w1(i, j) = rng.next_uniform(-limit1, limit1);
    }
  }
  p.b1 = Vector::Zero(dim);
  const double limit2 = std::sqrt(6.0 / (dim + 1.0));
  p.w2.resize(dim);
  for (Eigen::Index i = 0; i < p.w2.size(); ++i) {
    p.w2[i] = rng.next_uniform(-limit2, limit2);
  }
  p.b2 = Vector::Zero(1);
  return p;
}

struct EdgePredictorTrainResult {
  EdgePredictorParams params;
  std::vector<double> loss_log;
};

// Full-batch Adam on binary cross-entropy over both orientations of every
// labeled pair.
inline EdgePredictorTrainResult train_edge_predictor(const std::vector<LabeledPair>& pairs,
                                                     const EmbeddingMatrix& embeddings,
                                                     const EdgePredictorConfig& config) {
  if (pairs.empty()) throw InvalidParameter("no training pairs");
  const int d = embeddings.dim();
  const auto rows = static_cast<Eigen::Index>(2 * pairs.size());
  Matrix x(rows, 2 * d);
  Vector y(rows);
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(2 * i);
    x.row(r) << embeddings.data.row(pairs[i].u), embeddings.data.row(pairs[i].v);
    x.row(r + 1) << embeddings.data.row(pairs[i].v), embeddings.data.row(pairs[i].u);
    y[r] = y[r + 1] = static_cast<double>(pairs[i].label);
  }

  EdgePredictorTrainResult result;
  result.params = init_edge_predictor(d, config.seed);
  auto& p = result.params;
  Adam<double> opt(config.learning_rate, config.weight_decay);
  const double inv_n = 1.0 / static_cast<double>(rows);

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    Matrix z1 = (x * p.w1).rowwise() + p.b1.transpose();
    Matrix a1 = z1.cwiseMax(0.0);
    Vector z2 = (a1 * p.w2).array() + p.b2[0];

    double loss = 0.0;
    for (Eigen::Index i = 0; i < rows; ++i) loss += detail::bce_from_logit(z2[i], y[i]);
    loss *= inv_n;
    if (!std::isfinite(loss)) {
      throw NonFiniteLoss("edge predictor diverged at epoch " + std::to_string(epoch));
    }
    result.loss_log.push_back(loss);

    Vector dz2(rows);
    for (Eigen::Index i = 0; i < rows; ++i) {
      dz2[i] = (detail::sigmoid(z2[i]) - y[i]) * inv_n;
    }
    EdgePredictorParams grads;
    grads.w2 = a1.transpose() * dz2;
    grads.b2 = Vector::Constant(1, dz2.sum());
    Matrix da1 = dz2 * p.w2.transpose();
    Matrix dz1 = da1.cwiseProduct((z1.array() > 0.0).cast<double>().matrix());
    grads.w1 = x.transpose() * dz1;
    grads.b1 = dz1.colwise().sum();

    opt.step(tensor_views<double>(p), tensor_views<double>(grads));
  }
  return result;
}

// Scores every candidate in place (both orientations, averaged). Scores are
// written by candidate index, so the result does not depend on evaluation
// order.
inline void score_candidates(const EdgePredictorParams& params,
                             const EmbeddingMatrix& generated,
                             const EmbeddingMatrix& raw,
                             std::vector<EdgeCandidate>& candidates) {
  if (candidates.empty()) return;
  const int d = params.input_dim();
  if (generated.dim() != d || raw.dim() != d) {
    throw DimensionMismatch("candidate embeddings do not match predictor dim");
  }
  const auto rows = static_cast<Eigen::Index>(2 * candidates.size());
  Matrix x(rows, 2 * d);
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(2 * i);
    const auto& c = candidates[i];
    x.row(r) << generated.data.row(c.gen_index), raw.data.row(c.raw_id);
    x.row(r + 1) << raw.data.row(c.raw_id), generated.data.row(c.gen_index);
  }
  const Vector z = detail::mlp_logits(params, x);
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(2 * i);
    candidates[i].score = 0.5 * (detail::sigmoid(z[r]) + detail::sigmoid(z[r + 1]));
  }
}

// Highest-scoring min(k, |candidates|) pairs, globally across all generated
// nodes. Ties break by higher similarity, then ascending (gen_index, raw_id).
inline std::vector<std::pair<int, NodeId>> select_top_k(
    const std::vector<EdgeCandidate>& candidates, long long k) {
  for (const auto& c : candidates) {
    if (!c.score) throw InvalidParameter("unscored candidate in top-k selection");
  }
  std::vector<std::size_t> order(candidates.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto& ca = candidates[a];
    const auto& cb = candidates[b];
    if (*ca.score != *cb.score) return *ca.score > *cb.score;
    if (ca.similarity != cb.similarity) return ca.similarity > cb.similarity;
    if (ca.gen_index != cb.gen_index) return ca.gen_index < cb.gen_index;
    return ca.raw_id < cb.raw_id;
  });
  const std::size_t take =
      std::min<std::size_t>(order.size(), k < 0 ? 0 : static_cast<std::size_t>(k));
  std::vector<std::pair<int, NodeId>> out;
  out.reserve(take);
  for (std::size_t i = 0; i < take; ++i) {
    out.push_back({candidates[order[i]].gen_index, candidates[order[i]].raw_id});
  }
  return out;
}

// Fraction of pairs classified correctly at threshold 0.5.
inline double evaluate_pairs(const EdgePredictorParams& params,
                             const EmbeddingMatrix& embeddings,
                             const std::vector<LabeledPair>& pairs) {
  if (pairs.empty()) throw EmptyMask("no pairs to evaluate");
  int correct = 0;
  for (const auto& pair : pairs) {
    const double p = predict_pair(params, embeddings.data.row(pair.u).transpose(),
                                  embeddings.data.row(pair.v).transpose());
    correct += ((p > 0.5) == (pair.label == 1));
  }
  return static_cast<double>(correct) / static_cast<double>(pairs.size());
}

}  // namespace llm4ng
