#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "llm4ng/errors.hpp"
#include "llm4ng/graph.hpp"
#include "llm4ng/rng.hpp"

namespace llm4ng {

// Per-class token pools plus a shared pool of class-neutral filler. The mock
// chat backend reuses these to emit class-consistent completions.
struct SynthVocabulary {
  std::vector<std::vector<std::string>> class_vocabs;
  std::vector<std::string> shared_vocab;
};

// Full control surface for the generator. `synth_dataset` fills one of
// these with defaults; fixture builders tune the knobs directly.
struct SynthSpec {
  std::vector<std::string> label_texts;
  SynthVocabulary vocab;
  int nodes_per_class = 0;
  double intra_edge_prob = 0.0;
  double inter_edge_prob = 0.0;
  int min_tokens_per_node = 15;
  int max_tokens_per_node = 40;
  // Fraction of a node's tokens drawn from its class vocabulary; sampled
  // per node so some nodes are much weaker class evidence than others.
  double class_fraction_min = 0.6;
  double class_fraction_max = 0.9;
  // Chance that a non-class token comes from another class's vocabulary
  // instead of the shared pool (confusable classes).
  double cross_class_noise = 0.0;
  std::uint64_t seed = 0;
};

struct SynthDataset {
  TextAttributedGraph graph;
  LabelSet labels;
  SynthVocabulary vocab;
};

namespace detail {

// Pronounceable unique tokens, deterministic under the rng.
inline std::string make_token(Rng& rng, std::set<std::string>& used) {
  static const char* syllables[] = {"ba", "ce", "di", "fo", "gu", "ha", "ki",
                                    "lo", "me", "nu", "pa", "qi", "ro", "su",
                                    "ta", "ve", "wo", "xu", "ya", "zo"};
  constexpr std::size_t n = sizeof(syllables) / sizeof(syllables[0]);
  for (;;) {
    std::string token;
    const int parts = 2 + static_cast<int>(rng.next_index(2));
    for (int i = 0; i < parts; ++i) token += syllables[rng.next_index(n)];
    if (used.insert(token).second) return token;
  }
}

}  // namespace detail

inline SynthDataset synth_dataset_ex(const SynthSpec& spec) {
  const int num_classes = static_cast<int>(spec.label_texts.size());
  if (num_classes < 1) throw InvalidParameter("need at least one class");
  if (spec.nodes_per_class < 1) throw InvalidParameter("nodes_per_class must be >= 1");
  if (spec.intra_edge_prob < 0.0 || spec.intra_edge_prob > 1.0 ||
      spec.inter_edge_prob < 0.0 || spec.inter_edge_prob > 1.0) {
    throw InvalidParameter("edge probabilities must lie in [0,1]");
  }
  if (static_cast<int>(spec.vocab.class_vocabs.size()) != num_classes) {
    throw InvalidParameter("need one vocabulary per class");
  }
  for (const auto& v : spec.vocab.class_vocabs) {
    if (v.empty()) throw InvalidParameter("class vocabulary must be non-empty");
  }
  if (spec.min_tokens_per_node < 1 || spec.max_tokens_per_node < spec.min_tokens_per_node) {
    throw InvalidParameter("bad token count range");
  }

  Rng rng(spec.seed);
  SynthDataset out;
  out.labels.label_texts = spec.label_texts;
  out.vocab = spec.vocab;

  auto& g = out.graph;
  g.num_nodes = num_classes * spec.nodes_per_class;
  g.num_raw_nodes = g.num_nodes;
  g.texts.reserve(static_cast<std::size_t>(g.num_nodes));
  g.labels.reserve(static_cast<std::size_t>(g.num_nodes));

  const auto& shared = spec.vocab.shared_vocab;
  for (NodeId id = 0; id < g.num_nodes; ++id) {
    const int cls = id / spec.nodes_per_class;
    const auto& class_vocab = spec.vocab.class_vocabs[static_cast<std::size_t>(cls)];
    const int count =
        spec.min_tokens_per_node +
        static_cast<int>(rng.next_index(static_cast<std::size_t>(
            spec.max_tokens_per_node - spec.min_tokens_per_node + 1)));
    const double class_fraction =
        rng.next_uniform(spec.class_fraction_min, spec.class_fraction_max);
    std::string text;
    for (int t = 0; t < count; ++t) {
      const std::string* token = nullptr;
      if (rng.next_bernoulli(class_fraction)) {
        token = &class_vocab[rng.next_index(class_vocab.size())];
      } else if (num_classes > 1 && rng.next_bernoulli(spec.cross_class_noise)) {
        int other = static_cast<int>(rng.next_index(static_cast<std::size_t>(num_classes - 1)));
        if (other >= cls) ++other;
        const auto& ov = spec.vocab.class_vocabs[static_cast<std::size_t>(other)];
        token = &ov[rng.next_index(ov.size())];
      } else if (!shared.empty()) {
        token = &shared[rng.next_index(shared.size())];
      } else {
        token = &class_vocab[rng.next_index(class_vocab.size())];
      }
      if (!text.empty()) text += ' ';
      text += *token;
    }
    g.texts.push_back(std::move(text));
    g.labels.emplace_back(cls);
  }

  // Stochastic block model over the class assignment.
  for (NodeId u = 0; u < g.num_nodes; ++u) {
    for (NodeId v = u + 1; v < g.num_nodes; ++v) {
      const bool same = (u / spec.nodes_per_class) == (v / spec.nodes_per_class);
      const double p = same ? spec.intra_edge_prob : spec.inter_edge_prob;
      if (rng.next_bernoulli(p)) g.edges.push_back({u, v});
    }
  }
  g.adjacency = build_adjacency(g.num_nodes, g.edges);
  return out;
}

// Stochastic-block-model TAG with bag-of-tokens node text. Deterministic
// under seed.
inline SynthDataset synth_dataset(int num_classes, int nodes_per_class,
                                  int vocab_per_class, double intra_edge_prob,
                                  double inter_edge_prob, std::uint64_t seed) {
  if (num_classes < 1) throw InvalidParameter("need at least one class");
  if (vocab_per_class < 1) throw InvalidParameter("vocab_per_class must be >= 1");

  SynthSpec spec;
  spec.nodes_per_class = nodes_per_class;
  spec.intra_edge_prob = intra_edge_prob;
  spec.inter_edge_prob = inter_edge_prob;
  spec.seed = seed;

  Rng vocab_rng(seed ^ 0x5eedf00dull);
  std::set<std::string> used;
  spec.vocab.class_vocabs.resize(static_cast<std::size_t>(num_classes));
  for (int c = 0; c < num_classes; ++c) {
    spec.label_texts.push_back("class-" + std::to_string(c));
    for (int i = 0; i < vocab_per_class; ++i) {
      spec.vocab.class_vocabs[static_cast<std::size_t>(c)].push_back(
          detail::make_token(vocab_rng, used));
    }
  }
  const int shared_size = std::max(16, vocab_per_class);
  for (int i = 0; i < shared_size; ++i) {
    spec.vocab.shared_vocab.push_back(detail::make_token(vocab_rng, used));
  }
  return synth_dataset_ex(spec);
}

}  // namespace llm4ng
