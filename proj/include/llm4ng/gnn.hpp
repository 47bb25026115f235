#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "llm4ng/errors.hpp"
#include "llm4ng/graph.hpp"
#include "llm4ng/optim.hpp"
#include "llm4ng/rng.hpp"
#include "llm4ng/tensor_io.hpp"

namespace llm4ng {

enum class GnnArch { kGcn, kGat };

inline GnnArch arch_from_string(const std::string& s) {
  if (s == "gcn") return GnnArch::kGcn;
  if (s == "gat") return GnnArch::kGat;
  throw InvalidParameter("unknown arch: " + s);
}

inline std::string to_string(GnnArch arch) {
  return arch == GnnArch::kGcn ? "gcn" : "gat";
}

// A_hat = D^{-1/2} (A + I) D^{-1/2} with D = diag(rowsum(A + I)).
// Entry (i,i) is 1/(deg_i + 1); an isolated node gets exactly 1.
struct NormalizedAdjacency {
  CsrMatrix mat;
};

namespace detail {

// Row structure of A with the diagonal inserted (closed neighborhoods).
inline CsrMatrix add_self_loops(const CsrMatrix& a) {
  CsrMatrix out;
  out.rows = a.rows;
  out.cols = a.cols;
  out.row_ptr.assign(static_cast<std::size_t>(a.rows) + 1, 0);
  for (int i = 0; i < a.rows; ++i) {
    out.row_ptr[static_cast<std::size_t>(i) + 1] =
        out.row_ptr[static_cast<std::size_t>(i)] + (a.row_ptr[i + 1] - a.row_ptr[i]) + 1;
  }
  out.col_idx.resize(static_cast<std::size_t>(out.row_ptr[a.rows]));
  out.values.assign(out.col_idx.size(), 1.0);
  for (int i = 0; i < a.rows; ++i) {
    auto cursor = static_cast<std::size_t>(out.row_ptr[i]);
    bool inserted = false;
    for (int k = a.row_ptr[i]; k < a.row_ptr[i + 1]; ++k) {
      const int j = a.col_idx[static_cast<std::size_t>(k)];
      if (!inserted && i < j) {
        out.col_idx[cursor++] = i;
        inserted = true;
      }
      out.col_idx[cursor++] = j;
    }
    if (!inserted) out.col_idx[cursor++] = i;
  }
  return out;
}

}  // namespace detail

inline NormalizedAdjacency normalize_adjacency(const CsrMatrix& a) {
  NormalizedAdjacency out;
  out.mat = detail::add_self_loops(a);
  std::vector<double> inv_sqrt_deg(static_cast<std::size_t>(a.rows));
  for (int i = 0; i < a.rows; ++i) {
    const int closed_degree = (a.row_ptr[i + 1] - a.row_ptr[i]) + 1;
    inv_sqrt_deg[static_cast<std::size_t>(i)] = 1.0 / std::sqrt(closed_degree);
  }
  for (int i = 0; i < out.mat.rows; ++i) {
    for (int k = out.mat.row_ptr[i]; k < out.mat.row_ptr[i + 1]; ++k) {
      const int j = out.mat.col_idx[static_cast<std::size_t>(k)];
      out.mat.values[static_cast<std::size_t>(k)] =
          inv_sqrt_deg[static_cast<std::size_t>(i)] * inv_sqrt_deg[static_cast<std::size_t>(j)];
    }
  }
  return out;
}

// Y = A * X with sequential per-row accumulation (fixed reduction order, so
// results are bit-reproducible).
template <class S>
MatrixT<S> spmm(const CsrMatrix& a, const MatrixT<S>& x) {
  if (a.cols != x.rows()) {
    throw DimensionMismatch("spmm: " + std::to_string(a.cols) + " vs " +
                            std::to_string(x.rows()));
  }
  MatrixT<S> y = MatrixT<S>::Zero(a.rows, x.cols());
  for (int i = 0; i < a.rows; ++i) {
    for (int k = a.row_ptr[i]; k < a.row_ptr[i + 1]; ++k) {
      y.row(i) += static_cast<S>(a.values[static_cast<std::size_t>(k)]) *
                  x.row(a.col_idx[static_cast<std::size_t>(k)]);
    }
  }
  return y;
}

namespace detail {

template <class S>
MatrixT<S> dropout_mask_scale(const MatrixT<S>& x, double rate, Rng& rng) {
  // Inverted dropout: surviving entries scaled by 1/(1-rate).
  MatrixT<S> out = x;
  const S scale = static_cast<S>(1.0 / (1.0 - rate));
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    for (Eigen::Index j = 0; j < out.cols(); ++j) {
      out(i, j) = rng.next_bernoulli(rate) ? S(0) : out(i, j) * scale;
    }
  }
  return out;
}

template <class S>
void fill_glorot(MatrixT<S>& m, Rng& rng) {
  const double limit = std::sqrt(6.0 / (m.rows() + m.cols()));
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      m(i, j) = static_cast<S>(rng.next_uniform(-limit, limit));
    }
  }
}

template <class S>
void fill_glorot(VectorT<S>& v, Rng& rng) {
  const double limit = std::sqrt(6.0 / (v.size() + 1));
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    v[i] = static_cast<S>(rng.next_uniform(-limit, limit));
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// GCN: logits = A_hat * ReLU(A_hat * dropout(H) * W1 + b1) * W2 + b2

template <class S>
struct GcnParamsT {
  MatrixT<S> w1;  // d x hidden
  VectorT<S> b1;
  MatrixT<S> w2;  // hidden x classes
  VectorT<S> b2;
  double dropout = 0.5;

  template <class F>
  void for_each(F&& f) {
    f(w1);
    f(b1);
    f(w2);
    f(b2);
  }
};
using GcnParams = GcnParamsT<double>;

template <class S>
GcnParamsT<S> init_gcn(int input_dim, int hidden, int num_classes, double dropout,
                       std::uint64_t seed) {
  GcnParamsT<S> p;
  Rng rng(seed);
  p.w1.resize(input_dim, hidden);
  detail::fill_glorot(p.w1, rng);
  p.b1 = VectorT<S>::Zero(hidden);
  p.w2.resize(hidden, num_classes);
  detail::fill_glorot(p.w2, rng);
  p.b2 = VectorT<S>::Zero(num_classes);
  p.dropout = dropout;
  return p;
}

template <class S>
struct GcnActs {
  MatrixT<S> s1;  // A_hat * dropout(H)
  MatrixT<S> z1;
  MatrixT<S> s2;  // A_hat * relu(z1)
};

template <class S>
MatrixT<S> gcn_forward(const GcnParamsT<S>& p, const NormalizedAdjacency& a_hat,
                       const MatrixT<S>& features, bool train_mode,
                       Rng* dropout_rng = nullptr, GcnActs<S>* acts = nullptr) {
  if (features.cols() != p.w1.rows() || p.w1.cols() != p.w2.rows()) {
    throw DimensionMismatch("gcn_forward shapes");
  }
  const bool use_dropout = train_mode && p.dropout > 0.0;
  if (use_dropout && dropout_rng == nullptr) {
    throw InvalidParameter("dropout requires an rng in train mode");
  }
  MatrixT<S> s1 = use_dropout
                      ? spmm(a_hat.mat, detail::dropout_mask_scale(features, p.dropout, *dropout_rng))
                      : spmm(a_hat.mat, features);
  MatrixT<S> z1 = (s1 * p.w1).rowwise() + p.b1.transpose();
  MatrixT<S> s2 = spmm(a_hat.mat, MatrixT<S>(z1.cwiseMax(S(0))));
  MatrixT<S> logits = (s2 * p.w2).rowwise() + p.b2.transpose();
  if (acts) {
    acts->s1 = std::move(s1);
    acts->z1 = std::move(z1);
    acts->s2 = std::move(s2);
  }
  return logits;
}

template <class S>
GcnParamsT<S> gcn_backward(const GcnParamsT<S>& p, const NormalizedAdjacency& a_hat,
                           const GcnActs<S>& acts, const MatrixT<S>& dlogits) {
  GcnParamsT<S> g;
  g.w2 = acts.s2.transpose() * dlogits;
  g.b2 = dlogits.colwise().sum();
  MatrixT<S> ds2 = dlogits * p.w2.transpose();
  MatrixT<S> da1 = spmm(a_hat.mat, ds2);  // A_hat is symmetric
  MatrixT<S> dz1 = da1.cwiseProduct((acts.z1.array() > S(0)).template cast<S>().matrix());
  g.w1 = acts.s1.transpose() * dz1;
  g.b1 = dz1.colwise().sum();
  return g;
}

// ---------------------------------------------------------------------------
// GAT: two layers of masked-softmax attention over closed neighborhoods.
// Layer 1 is multi-head with concatenated outputs and ELU; layer 2 is a
// single head emitting logits. Attention logit for edge (i <- j):
// LeakyReLU(a_src . W h_i + a_dst . W h_j).

template <class S>
struct GatHeadT {
  MatrixT<S> w;       // in x out
  VectorT<S> a_src;   // out
  VectorT<S> a_dst;   // out

  template <class F>
  void for_each(F&& f) {
    f(w);
    f(a_src);
    f(a_dst);
  }
};

template <class S>
struct GatParamsT {
  std::vector<GatHeadT<S>> heads;  // layer 1
  GatHeadT<S> out_head;            // layer 2
  double leaky_slope = 0.2;
  double dropout = 0.5;

  template <class F>
  void for_each(F&& f) {
    for (auto& h : heads) h.for_each(f);
    out_head.for_each(f);
  }
};
using GatParams = GatParamsT<double>;

template <class S>
GatParamsT<S> init_gat(int input_dim, int hidden_per_head, int num_heads,
                       int num_classes, double leaky_slope, double dropout,
                       std::uint64_t seed) {
  if (num_heads < 1) throw InvalidParameter("need at least one attention head");
  GatParamsT<S> p;
  p.leaky_slope = leaky_slope;
  p.dropout = dropout;
  Rng rng(seed);
  p.heads.resize(static_cast<std::size_t>(num_heads));
  for (auto& head : p.heads) {
    head.w.resize(input_dim, hidden_per_head);
    detail::fill_glorot(head.w, rng);
    head.a_src.resize(hidden_per_head);
    head.a_dst.resize(hidden_per_head);
    detail::fill_glorot(head.a_src, rng);
    detail::fill_glorot(head.a_dst, rng);
  }
  p.out_head.w.resize(num_heads * hidden_per_head, num_classes);
  detail::fill_glorot(p.out_head.w, rng);
  p.out_head.a_src.resize(num_classes);
  p.out_head.a_dst.resize(num_classes);
  detail::fill_glorot(p.out_head.a_src, rng);
  detail::fill_glorot(p.out_head.a_dst, rng);
  return p;
}

template <class S>
struct GatHeadActs {
  MatrixT<S> p;           // X * W
  std::vector<S> pre;     // attention logits before LeakyReLU, per csr entry
  std::vector<S> alpha;   // attention weights, per csr entry
};

template <class S>
struct GatActs {
  std::vector<GatHeadActs<S>> head1;
  MatrixT<S> head1_input;  // dropout-scaled features (set only in train mode)
  MatrixT<S> z1cat;
  MatrixT<S> a1;  // elu(z1cat)
  GatHeadActs<S> head2;
};

namespace detail {

template <class S>
MatrixT<S> gat_head_forward(const GatHeadT<S>& head, double slope,
                            const CsrMatrix& closed, const MatrixT<S>& x,
                            GatHeadActs<S>* acts) {
  MatrixT<S> p = x * head.w;
  VectorT<S> s = p * head.a_src;
  VectorT<S> t = p * head.a_dst;
  const auto nnz = static_cast<std::size_t>(closed.nnz());
  std::vector<S> pre(nnz), alpha(nnz);
  MatrixT<S> out = MatrixT<S>::Zero(x.rows(), p.cols());
  for (int i = 0; i < closed.rows; ++i) {
    const int begin = closed.row_ptr[i];
    const int end = closed.row_ptr[i + 1];
    S row_max = std::numeric_limits<S>::lowest();
    for (int k = begin; k < end; ++k) {
      const S raw = s[i] + t[closed.col_idx[static_cast<std::size_t>(k)]];
      pre[static_cast<std::size_t>(k)] = raw;
      const S e = raw > S(0) ? raw : static_cast<S>(slope) * raw;
      alpha[static_cast<std::size_t>(k)] = e;
      row_max = std::max(row_max, e);
    }
    S denom = S(0);
    for (int k = begin; k < end; ++k) {
      auto& a = alpha[static_cast<std::size_t>(k)];
      a = std::exp(a - row_max);
      denom += a;
    }
    for (int k = begin; k < end; ++k) {
      auto& a = alpha[static_cast<std::size_t>(k)];
      a /= denom;
      out.row(i) += a * p.row(closed.col_idx[static_cast<std::size_t>(k)]);
    }
  }
  if (acts) {
    acts->p = std::move(p);
    acts->pre = std::move(pre);
    acts->alpha = std::move(alpha);
  }
  return out;
}

template <class S>
GatHeadT<S> gat_head_backward(const GatHeadT<S>& head, double slope,
                              const CsrMatrix& closed, const MatrixT<S>& x,
                              const GatHeadActs<S>& acts, const MatrixT<S>& dout,
                              MatrixT<S>* dx_out) {
  const auto& p = acts.p;
  MatrixT<S> dp = MatrixT<S>::Zero(p.rows(), p.cols());
  VectorT<S> ds = VectorT<S>::Zero(p.rows());
  VectorT<S> dt = VectorT<S>::Zero(p.rows());
  for (int i = 0; i < closed.rows; ++i) {
    const int begin = closed.row_ptr[i];
    const int end = closed.row_ptr[i + 1];
    // Softmax backward needs sum_k alpha_k * dalpha_k over the row first.
    S inner = S(0);
    for (int k = begin; k < end; ++k) {
      const auto ku = static_cast<std::size_t>(k);
      const int j = closed.col_idx[ku];
      const S dalpha = dout.row(i).dot(p.row(j));
      inner += acts.alpha[ku] * dalpha;
      dp.row(j) += acts.alpha[ku] * dout.row(i);
    }
    for (int k = begin; k < end; ++k) {
      const auto ku = static_cast<std::size_t>(k);
      const int j = closed.col_idx[ku];
      const S dalpha = dout.row(i).dot(p.row(j));
      const S de = acts.alpha[ku] * (dalpha - inner);
      const S dpre = acts.pre[ku] > S(0) ? de : static_cast<S>(slope) * de;
      ds[i] += dpre;
      dt[j] += dpre;
    }
  }
  dp += ds * head.a_src.transpose();
  dp += dt * head.a_dst.transpose();

  GatHeadT<S> g;
  g.a_src = p.transpose() * ds;
  g.a_dst = p.transpose() * dt;
  g.w = x.transpose() * dp;
  if (dx_out) *dx_out = dp * head.w.transpose();
  return g;
}

}  // namespace detail

// `closed` is the adjacency with self-loops inserted (see add_self_loops);
// attention normalizes over each node's closed neighborhood.
template <class S>
MatrixT<S> gat_forward(const GatParamsT<S>& p, const CsrMatrix& closed,
                       const MatrixT<S>& features, bool train_mode,
                       Rng* dropout_rng = nullptr, GatActs<S>* acts = nullptr) {
  if (p.heads.empty() || features.cols() != p.heads.front().w.rows()) {
    throw DimensionMismatch("gat_forward shapes");
  }
  const auto hidden = p.heads.front().w.cols();
  if (p.out_head.w.rows() != static_cast<Eigen::Index>(p.heads.size()) * hidden) {
    throw DimensionMismatch("gat output head shape");
  }
  const bool use_dropout = train_mode && p.dropout > 0.0;
  if (use_dropout && dropout_rng == nullptr) {
    throw InvalidParameter("dropout requires an rng in train mode");
  }
  MatrixT<S> x0 = use_dropout
                      ? detail::dropout_mask_scale(features, p.dropout, *dropout_rng)
                      : features;

  MatrixT<S> z1cat(features.rows(), static_cast<Eigen::Index>(p.heads.size()) * hidden);
  if (acts) acts->head1.resize(p.heads.size());
  for (std::size_t h = 0; h < p.heads.size(); ++h) {
    GatHeadActs<S>* head_acts = acts ? &acts->head1[h] : nullptr;
    z1cat.middleCols(static_cast<Eigen::Index>(h) * hidden, hidden) =
        detail::gat_head_forward(p.heads[h], p.leaky_slope, closed, x0, head_acts);
  }
  MatrixT<S> a1 = z1cat.unaryExpr(
      [](S z) { return z > S(0) ? z : static_cast<S>(std::expm1(static_cast<double>(z))); });
  MatrixT<S> logits = detail::gat_head_forward(p.out_head, p.leaky_slope, closed, a1,
                                               acts ? &acts->head2 : nullptr);
  if (acts) {
    acts->z1cat = std::move(z1cat);
    acts->a1 = std::move(a1);
    if (use_dropout) acts->head1_input = x0;
  }
  return logits;
}

template <class S>
GatParamsT<S> gat_backward(const GatParamsT<S>& p, const CsrMatrix& closed,
                           const MatrixT<S>& features_used, const GatActs<S>& acts,
                           const MatrixT<S>& dlogits) {
  GatParamsT<S> g;
  g.leaky_slope = p.leaky_slope;
  g.dropout = p.dropout;
  MatrixT<S> da1;
  g.out_head = detail::gat_head_backward(p.out_head, p.leaky_slope, closed, acts.a1,
                                         acts.head2, dlogits, &da1);
  // ELU'(z) = 1 for z > 0, exp(z) otherwise.
  MatrixT<S> dz1 = da1.cwiseProduct(acts.z1cat.unaryExpr([](S z) {
    return z > S(0) ? S(1) : static_cast<S>(std::exp(static_cast<double>(z)));
  }));
  const auto hidden = p.heads.front().w.cols();
  g.heads.resize(p.heads.size());
  for (std::size_t h = 0; h < p.heads.size(); ++h) {
    const MatrixT<S> dout =
        dz1.middleCols(static_cast<Eigen::Index>(h) * hidden, hidden);
    g.heads[h] = detail::gat_head_backward(p.heads[h], p.leaky_slope, closed,
                                           features_used, acts.head1[h], dout, nullptr);
  }
  return g;
}

// ---------------------------------------------------------------------------
// Loss, metrics, training

template <class S>
MatrixT<S> softmax_rows(const MatrixT<S>& logits) {
  MatrixT<S> probs(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const S row_max = logits.row(i).maxCoeff();
    VectorT<S> e = (logits.row(i).array() - row_max).exp();
    probs.row(i) = (e / e.sum()).transpose();
  }
  return probs;
}

struct LossAndGrad {
  double loss = 0.0;
  Matrix dlogits;
};

template <class S>
struct LossAndGradT {
  double loss = 0.0;
  MatrixT<S> dlogits;
};

// Mean softmax cross-entropy over the masked nodes. The gradient is
// (softmax - onehot)/|mask| on masked rows and zero elsewhere.
template <class S>
LossAndGradT<S> masked_xent_loss(const MatrixT<S>& logits,
                                 const std::vector<std::optional<int>>& labels,
                                 const std::vector<NodeId>& mask) {
  if (mask.empty()) throw EmptyMask("loss mask selects no nodes");
  LossAndGradT<S> out;
  out.dlogits = MatrixT<S>::Zero(logits.rows(), logits.cols());
  const double inv = 1.0 / static_cast<double>(mask.size());
  for (NodeId id : mask) {
    if (id < 0 || id >= logits.rows()) throw IndexOutOfRange("mask id " + std::to_string(id));
    const auto& label = labels[static_cast<std::size_t>(id)];
    if (!label) throw InvalidParameter("masked node " + std::to_string(id) + " is unlabeled");
    const S row_max = logits.row(id).maxCoeff();
    VectorT<S> e = (logits.row(id).array() - row_max).exp();
    const S denom = e.sum();
    const double p_true = static_cast<double>(e[*label] / denom);
    out.loss -= std::log(std::max(p_true, 1e-300)) * inv;
    out.dlogits.row(id) = (e / denom).transpose() * static_cast<S>(inv);
    out.dlogits(id, *label) -= static_cast<S>(inv);
  }
  return out;
}

template <class S>
double masked_accuracy(const MatrixT<S>& logits,
                       const std::vector<std::optional<int>>& labels,
                       const std::vector<NodeId>& mask) {
  if (mask.empty()) throw EmptyMask("accuracy mask selects no nodes");
  int correct = 0;
  for (NodeId id : mask) {
    const auto& label = labels[static_cast<std::size_t>(id)];
    if (!label) throw InvalidParameter("node " + std::to_string(id) + " is unlabeled");
    Eigen::Index argmax = 0;
    logits.row(id).maxCoeff(&argmax);
    correct += (static_cast<int>(argmax) == *label);
  }
  return static_cast<double>(correct) / static_cast<double>(mask.size());
}

struct TrainConfig {
  int hidden = 64;       // GCN hidden width, or GAT per-head width * heads
  int heads = 8;         // GAT layer-1 heads
  double dropout = 0.5;
  double learning_rate = 1e-2;
  double weight_decay = 5e-4;
  int max_epochs = 500;
  int patience = 50;
  double leaky_slope = 0.2;
  std::uint64_t seed = 0;
  std::string precision = "f64";  // f64 (deterministic reference) or f32
};

struct TrainLog {
  std::vector<double> train_loss;
  std::vector<double> val_accuracy;
  std::vector<double> val_loss;
  int best_epoch = -1;
  double best_val_accuracy = 0.0;
};

struct Prediction {
  Matrix probabilities;  // rows sum to 1
  std::vector<int> argmax;
};

struct TrainedGnn {
  GnnArch arch = GnnArch::kGcn;
  GcnParams gcn;
  GatParams gat;
  Prediction prediction;
  TrainLog log;
};

namespace detail {

template <class S>
MatrixT<S> cast_matrix(const Matrix& m) {
  if constexpr (std::is_same_v<S, double>) {
    return m;
  } else {
    return m.template cast<S>();
  }
}

inline Matrix cast_back(const Matrix& m) { return m; }
inline Matrix cast_back(const MatrixT<float>& m) { return m.cast<double>(); }
inline Vector cast_back(const Vector& v) { return v; }
inline Vector cast_back(const VectorT<float>& v) { return v.cast<double>(); }

template <class S>
GcnParams to_double(const GcnParamsT<S>& p) {
  GcnParams out;
  out.w1 = cast_back(p.w1);
  out.b1 = cast_back(p.b1);
  out.w2 = cast_back(p.w2);
  out.b2 = cast_back(p.b2);
  out.dropout = p.dropout;
  return out;
}

template <class S>
GatParams to_double(const GatParamsT<S>& p) {
  GatParams out;
  out.leaky_slope = p.leaky_slope;
  out.dropout = p.dropout;
  out.heads.resize(p.heads.size());
  for (std::size_t i = 0; i < p.heads.size(); ++i) {
    out.heads[i].w = cast_back(p.heads[i].w);
    out.heads[i].a_src = cast_back(p.heads[i].a_src);
    out.heads[i].a_dst = cast_back(p.heads[i].a_dst);
  }
  out.out_head.w = cast_back(p.out_head.w);
  out.out_head.a_src = cast_back(p.out_head.a_src);
  out.out_head.a_dst = cast_back(p.out_head.a_dst);
  return out;
}

template <class S>
TrainedGnn train_gnn_impl(const CsrMatrix& adjacency, const Matrix& features,
                          const std::vector<std::optional<int>>& labels,
                          const std::vector<NodeId>& labeled_ids,
                          const std::vector<NodeId>& val_ids, int num_classes,
                          const TrainConfig& config, GnnArch arch) {
  const MatrixT<S> x = cast_matrix<S>(features);
  const NormalizedAdjacency a_hat = normalize_adjacency(adjacency);
  const CsrMatrix closed = add_self_loops(adjacency);

  const int input_dim = static_cast<int>(features.cols());
  GcnParamsT<S> gcn;
  GatParamsT<S> gat;
  int per_head = 0;
  if (arch == GnnArch::kGcn) {
    gcn = init_gcn<S>(input_dim, config.hidden, num_classes, config.dropout, config.seed);
  } else {
    per_head = std::max(1, config.hidden / config.heads);
    gat = init_gat<S>(input_dim, per_head, config.heads, num_classes,
                      config.leaky_slope, config.dropout, config.seed);
  }

  auto forward_train = [&](Rng& rng, GcnActs<S>& gacts, GatActs<S>& aacts) {
    return arch == GnnArch::kGcn
               ? gcn_forward(gcn, a_hat, x, true, &rng, &gacts)
               : gat_forward(gat, closed, x, true, &rng, &aacts);
  };
  auto forward_eval = [&]() {
    return arch == GnnArch::kGcn ? gcn_forward(gcn, a_hat, x, false)
                                 : gat_forward(gat, closed, x, false);
  };

  Adam<S> opt(config.learning_rate, config.weight_decay);
  Rng dropout_rng(config.seed ^ 0x9b97f4a7c15ull);

  TrainedGnn result;
  result.arch = arch;
  GcnParamsT<S> best_gcn = gcn;
  GatParamsT<S> best_gat = gat;
  double best_acc = -1.0;
  double best_loss = std::numeric_limits<double>::infinity();
  int epochs_since_improvement = 0;

  for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
    GcnActs<S> gacts;
    GatActs<S> aacts;
    MatrixT<S> logits = forward_train(dropout_rng, gacts, aacts);
    auto lg = masked_xent_loss(logits, labels, labeled_ids);
    if (!std::isfinite(lg.loss)) {
      throw NonFiniteLoss("training diverged at epoch " + std::to_string(epoch));
    }
    result.log.train_loss.push_back(lg.loss);

    if (arch == GnnArch::kGcn) {
      GcnParamsT<S> grads = gcn_backward(gcn, a_hat, gacts, lg.dlogits);
      opt.step(tensor_views<S>(gcn), tensor_views<S>(grads));
    } else {
      const MatrixT<S>& used = aacts.head1_input.size() > 0 ? aacts.head1_input : x;
      GatParamsT<S> grads = gat_backward(gat, closed, used, aacts, lg.dlogits);
      opt.step(tensor_views<S>(gat), tensor_views<S>(grads));
    }

    if (!val_ids.empty()) {
      MatrixT<S> eval_logits = forward_eval();
      const double val_acc = masked_accuracy(eval_logits, labels, val_ids);
      const double val_loss = masked_xent_loss(eval_logits, labels, val_ids).loss;
      result.log.val_accuracy.push_back(val_acc);
      result.log.val_loss.push_back(val_loss);
      const bool improved =
          val_acc > best_acc || (val_acc == best_acc && val_loss < best_loss);
      if (improved) {
        best_acc = val_acc;
        best_loss = val_loss;
        best_gcn = gcn;
        best_gat = gat;
        result.log.best_epoch = epoch;
        epochs_since_improvement = 0;
      } else if (++epochs_since_improvement >= config.patience) {
        break;
      }
    }
  }

  if (val_ids.empty()) {
    best_gcn = gcn;
    best_gat = gat;
    result.log.best_epoch = config.max_epochs - 1;
  }
  result.log.best_val_accuracy = std::max(best_acc, 0.0);

  if (arch == GnnArch::kGcn) {
    gcn = best_gcn;
    result.gcn = to_double(best_gcn);
  } else {
    gat = best_gat;
    result.gat = to_double(best_gat);
  }
  MatrixT<S> final_logits = forward_eval();
  MatrixT<S> probs = softmax_rows(final_logits);
  result.prediction.probabilities = cast_back(probs);
  result.prediction.argmax.resize(static_cast<std::size_t>(probs.rows()));
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    Eigen::Index argmax = 0;
    probs.row(i).maxCoeff(&argmax);
    result.prediction.argmax[static_cast<std::size_t>(i)] = static_cast<int>(argmax);
  }
  return result;
}

}  // namespace detail

// Full-batch Adam training with early stopping on validation accuracy
// (ties broken by lower validation loss); returns the best-validation
// parameters. Deterministic under seed in f64 mode.
inline TrainedGnn train_gnn(const CsrMatrix& adjacency, const Matrix& features,
                            const std::vector<std::optional<int>>& labels,
                            const std::vector<NodeId>& labeled_ids,
                            const std::vector<NodeId>& val_ids, int num_classes,
                            const TrainConfig& config, GnnArch arch) {
  if (labeled_ids.empty()) throw NoLabeledNodes("training requires labeled nodes");
  if (config.precision == "f64") {
    return detail::train_gnn_impl<double>(adjacency, features, labels, labeled_ids,
                                          val_ids, num_classes, config, arch);
  }
  if (config.precision == "f32") {
    return detail::train_gnn_impl<float>(adjacency, features, labels, labeled_ids,
                                         val_ids, num_classes, config, arch);
  }
  throw InvalidParameter("precision must be f32 or f64");
}

inline Matrix gnn_logits(const TrainedGnn& model, const CsrMatrix& adjacency,
                         const Matrix& features) {
  if (model.arch == GnnArch::kGcn) {
    const NormalizedAdjacency a_hat = normalize_adjacency(adjacency);
    return gcn_forward(model.gcn, a_hat, features, false);
  }
  const CsrMatrix closed = detail::add_self_loops(adjacency);
  return gat_forward(model.gat, closed, features, false);
}

// Fraction of argmax predictions equal to labels over `ids`.
inline double evaluate(const TrainedGnn& model, const CsrMatrix& adjacency,
                       const Matrix& features,
                       const std::vector<std::optional<int>>& labels,
                       const std::vector<NodeId>& ids) {
  const Matrix logits = gnn_logits(model, adjacency, features);
  return masked_accuracy(logits, labels, ids);
}

// Max relative error between analytic parameter gradients and central
// finite differences (dropout off, f64). Directions where both gradients
// are ~0 are excluded from the relative denominator.
inline double grad_check(GnnArch arch, const CsrMatrix& adjacency, const Matrix& features,
                         const std::vector<std::optional<int>>& labels,
                         const std::vector<NodeId>& mask, int num_classes,
                         const TrainConfig& config) {
  if (config.dropout != 0.0) throw InvalidParameter("grad_check requires dropout 0");
  const NormalizedAdjacency a_hat = normalize_adjacency(adjacency);
  const CsrMatrix closed = detail::add_self_loops(adjacency);
  const int input_dim = static_cast<int>(features.cols());

  GcnParams gcn;
  GatParams gat;
  if (arch == GnnArch::kGcn) {
    gcn = init_gcn<double>(input_dim, config.hidden, num_classes, 0.0, config.seed);
  } else {
    const int per_head = std::max(1, config.hidden / config.heads);
    gat = init_gat<double>(input_dim, per_head, config.heads, num_classes,
                           config.leaky_slope, 0.0, config.seed);
  }

  auto loss_value = [&]() {
    const Matrix logits = arch == GnnArch::kGcn
                              ? gcn_forward(gcn, a_hat, features, false)
                              : gat_forward(gat, closed, features, false);
    return masked_xent_loss(logits, labels, mask).loss;
  };

  // Analytic gradients.
  GcnParams gcn_grads;
  GatParams gat_grads;
  if (arch == GnnArch::kGcn) {
    GcnActs<double> acts;
    const Matrix logits = gcn_forward(gcn, a_hat, features, false, nullptr, &acts);
    gcn_grads = gcn_backward(gcn, a_hat, acts, masked_xent_loss(logits, labels, mask).dlogits);
  } else {
    GatActs<double> acts;
    const Matrix logits = gat_forward(gat, closed, features, false, nullptr, &acts);
    gat_grads = gat_backward(gat, closed, features, acts,
                             masked_xent_loss(logits, labels, mask).dlogits);
  }

  auto views = arch == GnnArch::kGcn ? tensor_views<double>(gcn) : tensor_views<double>(gat);
  auto grad_views = arch == GnnArch::kGcn ? tensor_views<double>(gcn_grads)
                                          : tensor_views<double>(gat_grads);
  const double step = 1e-5;
  double max_rel_err = 0.0;
  for (std::size_t t = 0; t < views.size(); ++t) {
    for (Eigen::Index i = 0; i < views[t].size; ++i) {
      double& param = views[t].data[i];
      const double saved = param;
      param = saved + step;
      const double loss_plus = loss_value();
      param = saved - step;
      const double loss_minus = loss_value();
      param = saved;
      const double numeric = (loss_plus - loss_minus) / (2.0 * step);
      const double analytic = grad_views[t].data[i];
      const double scale = std::max(std::abs(numeric), std::abs(analytic));
      if (scale < 1e-6) continue;  // zero-gradient direction: skip
      max_rel_err = std::max(max_rel_err, std::abs(numeric - analytic) / scale);
    }
  }
  return max_rel_err;
}

// ---------------------------------------------------------------------------
// Persistence: per-tensor binary blocks plus a JSON manifest.

inline void save_gnn(const std::string& path, const TrainedGnn& model,
                     const TrainConfig& config) {
  std::vector<Matrix> tensors;
  nlohmann::json dims;
  if (model.arch == GnnArch::kGcn) {
    tensors = {model.gcn.w1, Matrix(model.gcn.b1.transpose()), model.gcn.w2,
               Matrix(model.gcn.b2.transpose())};
    dims = {{"input", model.gcn.w1.rows()},
            {"hidden", model.gcn.w1.cols()},
            {"classes", model.gcn.w2.cols()}};
  } else {
    for (const auto& head : model.gat.heads) {
      tensors.push_back(head.w);
      tensors.push_back(Matrix(head.a_src.transpose()));
      tensors.push_back(Matrix(head.a_dst.transpose()));
    }
    tensors.push_back(model.gat.out_head.w);
    tensors.push_back(Matrix(model.gat.out_head.a_src.transpose()));
    tensors.push_back(Matrix(model.gat.out_head.a_dst.transpose()));
    dims = {{"input", model.gat.heads.front().w.rows()},
            {"per_head", model.gat.heads.front().w.cols()},
            {"heads", model.gat.heads.size()},
            {"classes", model.gat.out_head.w.cols()}};
  }
  save_tensors(path, tensors);
  const nlohmann::json manifest = {
      {"arch", to_string(model.arch)},
      {"dims", dims},
      {"config",
       {{"hidden", config.hidden},
        {"heads", config.heads},
        {"dropout", config.dropout},
        {"learning_rate", config.learning_rate},
        {"weight_decay", config.weight_decay},
        {"max_epochs", config.max_epochs},
        {"patience", config.patience},
        {"precision", config.precision}}},
      {"seed", config.seed}};
  write_text_file(path + ".json", manifest.dump(2) + "\n");
}

inline TrainedGnn load_gnn(const std::string& path) {
  const nlohmann::json manifest =
      nlohmann::json::parse(read_text_file(path + ".json"));
  TrainedGnn model;
  model.arch = arch_from_string(manifest.at("arch").get<std::string>());
  const auto tensors = load_tensors(path);
  if (model.arch == GnnArch::kGcn) {
    if (tensors.size() != 4) throw IoFailure("gcn model needs 4 tensors");
    model.gcn.w1 = tensors[0];
    model.gcn.b1 = tensors[1].row(0).transpose();
    model.gcn.w2 = tensors[2];
    model.gcn.b2 = tensors[3].row(0).transpose();
    model.gcn.dropout = 0.0;
  } else {
    const auto heads = manifest.at("dims").at("heads").get<std::size_t>();
    if (tensors.size() != 3 * heads + 3) throw IoFailure("gat model tensor count");
    model.gat.heads.resize(heads);
    for (std::size_t h = 0; h < heads; ++h) {
      model.gat.heads[h].w = tensors[3 * h];
      model.gat.heads[h].a_src = tensors[3 * h + 1].row(0).transpose();
      model.gat.heads[h].a_dst = tensors[3 * h + 2].row(0).transpose();
    }
    model.gat.out_head.w = tensors[3 * heads];
    model.gat.out_head.a_src = tensors[3 * heads + 1].row(0).transpose();
    model.gat.out_head.a_dst = tensors[3 * heads + 2].row(0).transpose();
    model.gat.dropout = 0.0;
  }
  return model;
}

}  // namespace llm4ng
