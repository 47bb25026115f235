#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "llm4ng/errors.hpp"
#include "llm4ng/rng.hpp"
#include "llm4ng/sample.hpp"

namespace llm4ng {

using NodeId = int;
using Edge = std::pair<NodeId, NodeId>;  // canonical: first < second

// Compressed-row sparse matrix. Column indices within a row are ascending.
struct CsrMatrix {
  int rows = 0;
  int cols = 0;
  std::vector<int> row_ptr;  // size rows+1
  std::vector<int> col_idx;
  std::vector<double> values;

  std::span<const int> row_indices(int i) const {
    return {col_idx.data() + row_ptr[i],
            static_cast<std::size_t>(row_ptr[i + 1] - row_ptr[i])};
  }
  std::span<const double> row_values(int i) const {
    return {values.data() + row_ptr[i],
            static_cast<std::size_t>(row_ptr[i + 1] - row_ptr[i])};
  }
  int nnz() const { return static_cast<int>(col_idx.size()); }
  bool has_entry(int i, int j) const {
    const auto row = row_indices(i);
    return std::binary_search(row.begin(), row.end(), j);
  }
};

// Symmetric 0/1 adjacency (both (u,v) and (v,u) materialized, zero diagonal)
// from a canonical undirected edge list.
inline CsrMatrix build_adjacency(int num_nodes, const std::vector<Edge>& edges) {
  CsrMatrix a;
  a.rows = a.cols = num_nodes;
  a.row_ptr.assign(static_cast<std::size_t>(num_nodes) + 1, 0);
  for (const auto& [u, v] : edges) {
    a.row_ptr[static_cast<std::size_t>(u) + 1]++;
    a.row_ptr[static_cast<std::size_t>(v) + 1]++;
  }
  for (int i = 0; i < num_nodes; ++i) a.row_ptr[i + 1] += a.row_ptr[i];
  a.col_idx.resize(static_cast<std::size_t>(a.row_ptr[num_nodes]));
  std::vector<int> cursor(a.row_ptr.begin(), a.row_ptr.end() - 1);
  for (const auto& [u, v] : edges) {
    a.col_idx[static_cast<std::size_t>(cursor[u]++)] = v;
    a.col_idx[static_cast<std::size_t>(cursor[v]++)] = u;
  }
  for (int i = 0; i < num_nodes; ++i) {
    std::sort(a.col_idx.begin() + a.row_ptr[i], a.col_idx.begin() + a.row_ptr[i + 1]);
  }
  a.values.assign(a.col_idx.size(), 1.0);
  return a;
}

struct LabelSet {
  std::vector<std::string> label_texts;  // index = class id

  int num_classes() const { return static_cast<int>(label_texts.size()); }
  const std::string& text(int class_id) const {
    if (class_id < 0 || class_id >= num_classes()) {
      throw IndexOutOfRange("class id " + std::to_string(class_id));
    }
    return label_texts[static_cast<std::size_t>(class_id)];
  }
};

// Immutable after construction; merge and split return new values.
struct TextAttributedGraph {
  int num_nodes = 0;
  int num_raw_nodes = 0;  // ids >= num_raw_nodes are generated nodes
  std::vector<std::string> texts;
  std::vector<std::optional<int>> labels;
  std::vector<Edge> edges;  // canonical, sorted, unique
  CsrMatrix adjacency;

  int num_generated() const { return num_nodes - num_raw_nodes; }
  bool is_generated(NodeId id) const { return id >= num_raw_nodes; }
  int degree(NodeId id) const {
    return adjacency.row_ptr[id + 1] - adjacency.row_ptr[id];
  }
  bool has_edge(NodeId u, NodeId v) const { return adjacency.has_entry(u, v); }
};

struct LoadReport {
  int self_loops_dropped = 0;
  int duplicate_edges_dropped = 0;
};

struct LoadedDataset {
  TextAttributedGraph graph;
  LabelSet labels;
  LoadReport report;
};

namespace detail {

inline nlohmann::json parse_jsonl_line(const std::string& line,
                                       const std::string& path, int lineno) {
  nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
  if (j.is_discarded() || !j.is_object()) {
    throw MalformedRecord(path + ":" + std::to_string(lineno) + ": not a JSON object");
  }
  return j;
}

}  // namespace detail

// Node file: JSON-lines {"id", "text", "label": int|null}; ids must cover
// 0..n-1. Edge file: "u<TAB>v" per line. Labels file: JSON-lines
// {"id", "text"} mapping class id to label text.
inline LoadedDataset load_graph(const std::string& nodes_path,
                                const std::string& edges_path,
                                const std::string& labels_path) {
  LoadedDataset out;

  {
    std::ifstream is(labels_path);
    if (!is) throw IoFailure("cannot open " + labels_path);
    std::string line;
    int lineno = 0;
    std::vector<std::pair<int, std::string>> entries;
    while (std::getline(is, line)) {
      ++lineno;
      if (line.empty()) continue;
      auto j = detail::parse_jsonl_line(line, labels_path, lineno);
      if (!j.contains("id") || !j["id"].is_number_integer() ||
          !j.contains("text") || !j["text"].is_string()) {
        throw MalformedRecord(labels_path + ":" + std::to_string(lineno) +
                              ": expected {\"id\": int, \"text\": string}");
      }
      entries.emplace_back(j["id"].get<int>(), j["text"].get<std::string>());
    }
    if (entries.empty()) throw MalformedRecord(labels_path + ": no label records");
    std::sort(entries.begin(), entries.end());
    out.labels.label_texts.resize(entries.size());
    std::set<std::string> seen;
    for (std::size_t i = 0; i < entries.size(); ++i) {
      if (entries[i].first != static_cast<int>(i)) {
        throw MalformedRecord(labels_path + ": class ids must cover 0.." +
                              std::to_string(entries.size() - 1));
      }
      if (entries[i].second.empty() || !seen.insert(entries[i].second).second) {
        throw MalformedRecord(labels_path + ": label texts must be unique and non-empty");
      }
      out.labels.label_texts[i] = entries[i].second;
    }
  }

  auto& g = out.graph;
  {
    std::ifstream is(nodes_path);
    if (!is) throw IoFailure("cannot open " + nodes_path);
    std::string line;
    int lineno = 0;
    struct Rec {
      int id;
      std::string text;
      std::optional<int> label;
    };
    std::vector<Rec> recs;
    while (std::getline(is, line)) {
      ++lineno;
      if (line.empty()) continue;
      auto j = detail::parse_jsonl_line(line, nodes_path, lineno);
      if (!j.contains("id") || !j["id"].is_number_integer() ||
          !j.contains("text") || !j["text"].is_string()) {
        throw MalformedRecord(nodes_path + ":" + std::to_string(lineno) +
                              ": expected {\"id\": int, \"text\": string, \"label\": int|null}");
      }
      Rec r{j["id"].get<int>(), j["text"].get<std::string>(), std::nullopt};
      if (j.contains("label") && !j["label"].is_null()) {
        if (!j["label"].is_number_integer()) {
          throw MalformedRecord(nodes_path + ":" + std::to_string(lineno) +
                                ": label must be int or null");
        }
        const int label = j["label"].get<int>();
        if (label < 0 || label >= out.labels.num_classes()) {
          throw MalformedRecord(nodes_path + ":" + std::to_string(lineno) +
                                ": label " + std::to_string(label) +
                                " outside label set");
        }
        r.label = label;
      }
      recs.push_back(std::move(r));
    }
    std::sort(recs.begin(), recs.end(),
              [](const Rec& a, const Rec& b) { return a.id < b.id; });
    for (std::size_t i = 0; i < recs.size(); ++i) {
      if (recs[i].id != static_cast<int>(i)) {
        throw MalformedRecord(nodes_path + ": node ids must cover 0.." +
                              std::to_string(recs.size() - 1) + " exactly");
      }
    }
    g.num_nodes = static_cast<int>(recs.size());
    g.num_raw_nodes = g.num_nodes;
    g.texts.reserve(recs.size());
    g.labels.reserve(recs.size());
    for (auto& r : recs) {
      g.texts.push_back(std::move(r.text));
      g.labels.push_back(r.label);
    }
  }

  {
    std::ifstream is(edges_path);
    if (!is) throw IoFailure("cannot open " + edges_path);
    std::string line;
    int lineno = 0;
    std::set<Edge> edge_set;
    while (std::getline(is, line)) {
      ++lineno;
      if (line.empty()) continue;
      const auto tab = line.find('\t');
      if (tab == std::string::npos) {
        throw MalformedRecord(edges_path + ":" + std::to_string(lineno) +
                              ": expected \"u<TAB>v\"");
      }
      int u = 0, v = 0;
      try {
        std::size_t pos_u = 0, pos_v = 0;
        u = std::stoi(line.substr(0, tab), &pos_u);
        const std::string rest = line.substr(tab + 1);
        v = std::stoi(rest, &pos_v);
        if (pos_u != tab || pos_v != rest.size()) {
          throw std::invalid_argument("trailing characters");
        }
      } catch (const std::exception&) {
        throw MalformedRecord(edges_path + ":" + std::to_string(lineno) +
                              ": non-integer node id");
      }
      if (u < 0 || u >= g.num_nodes || v < 0 || v >= g.num_nodes) {
        throw DanglingEdge(edges_path + ":" + std::to_string(lineno) + ": (" +
                           std::to_string(u) + "," + std::to_string(v) +
                           ") references unknown node");
      }
      if (u == v) {
        out.report.self_loops_dropped++;
        continue;
      }
      if (!edge_set.insert({std::min(u, v), std::max(u, v)}).second) {
        out.report.duplicate_edges_dropped++;
      }
    }
    g.edges.assign(edge_set.begin(), edge_set.end());
  }

  g.adjacency = build_adjacency(g.num_nodes, g.edges);
  return out;
}

struct FewShotSplit {
  int k_shots = 0;
  std::vector<NodeId> train_ids;
  std::vector<NodeId> val_ids;
  std::vector<NodeId> test_ids;
  std::vector<NodeId> generated_train_ids;

  // All ids that carry supervision during GNN training.
  std::vector<NodeId> labeled_ids() const {
    std::vector<NodeId> out = train_ids;
    out.insert(out.end(), generated_train_ids.begin(), generated_train_ids.end());
    return out;
  }
};

// Exactly K nodes per class into train, then val/test uniformly without
// replacement from the remaining labeled raw nodes. Pure in (inputs, seed).
inline FewShotSplit sample_few_shot_split(const TextAttributedGraph& graph,
                                          const LabelSet& labels, int k_shots,
                                          int val_size, int test_size,
                                          std::uint64_t seed) {
  if (k_shots < 0 || val_size < 0 || test_size < 0) {
    throw InvalidParameter("split sizes must be non-negative");
  }
  Rng rng(seed);
  std::vector<std::vector<NodeId>> by_class(
      static_cast<std::size_t>(labels.num_classes()));
  for (NodeId id = 0; id < graph.num_raw_nodes; ++id) {
    if (graph.labels[static_cast<std::size_t>(id)]) {
      by_class[static_cast<std::size_t>(*graph.labels[static_cast<std::size_t>(id)])]
          .push_back(id);
    }
  }

  FewShotSplit split;
  split.k_shots = k_shots;
  std::vector<bool> in_train(static_cast<std::size_t>(graph.num_raw_nodes), false);
  for (int c = 0; c < labels.num_classes(); ++c) {
    auto& members = by_class[static_cast<std::size_t>(c)];
    if (static_cast<int>(members.size()) < k_shots) {
      throw InsufficientNodes("class " + std::to_string(c) + " has " +
                              std::to_string(members.size()) + " nodes, need " +
                              std::to_string(k_shots));
    }
    rng.shuffle(members);
    for (int i = 0; i < k_shots; ++i) {
      split.train_ids.push_back(members[static_cast<std::size_t>(i)]);
      in_train[static_cast<std::size_t>(members[static_cast<std::size_t>(i)])] = true;
    }
  }
  std::sort(split.train_ids.begin(), split.train_ids.end());

  std::vector<NodeId> remainder;
  for (NodeId id = 0; id < graph.num_raw_nodes; ++id) {
    if (graph.labels[static_cast<std::size_t>(id)] && !in_train[static_cast<std::size_t>(id)]) {
      remainder.push_back(id);
    }
  }
  if (static_cast<int>(remainder.size()) < val_size + test_size) {
    throw InsufficientNodes("remainder " + std::to_string(remainder.size()) +
                            " < val+test " + std::to_string(val_size + test_size));
  }
  rng.shuffle(remainder);
  split.val_ids.assign(remainder.begin(), remainder.begin() + val_size);
  split.test_ids.assign(remainder.begin() + val_size,
                        remainder.begin() + val_size + test_size);
  std::sort(split.val_ids.begin(), split.val_ids.end());
  std::sort(split.test_ids.begin(), split.test_ids.end());
  return split;
}

// Fixed split file (ogbn-style): JSON {"train": [...], "val": [...], "test": [...]}.
// K-shot reduction samples K train nodes per class from the file's train set.
inline FewShotSplit load_fixed_split(const std::string& path,
                                     const TextAttributedGraph& graph,
                                     const LabelSet& labels, int k_shots,
                                     std::uint64_t seed) {
  nlohmann::json j;
  {
    std::ifstream is(path);
    if (!is) throw IoFailure("cannot open " + path);
    j = nlohmann::json::parse(is, nullptr, false);
  }
  if (j.is_discarded() || !j.is_object() || !j.contains("train") ||
      !j.contains("val") || !j.contains("test")) {
    throw MalformedRecord(path + ": expected {\"train\", \"val\", \"test\"} id arrays");
  }
  auto read_ids = [&](const char* key) {
    std::vector<NodeId> ids;
    for (const auto& v : j[key]) {
      const int id = v.get<int>();
      if (id < 0 || id >= graph.num_raw_nodes) {
        throw MalformedRecord(path + ": id " + std::to_string(id) + " out of range");
      }
      ids.push_back(id);
    }
    std::sort(ids.begin(), ids.end());
    return ids;
  };

  FewShotSplit split;
  split.k_shots = k_shots;
  split.val_ids = read_ids("val");
  split.test_ids = read_ids("test");

  std::vector<std::vector<NodeId>> by_class(
      static_cast<std::size_t>(labels.num_classes()));
  for (NodeId id : read_ids("train")) {
    const auto& label = graph.labels[static_cast<std::size_t>(id)];
    if (!label) throw MalformedRecord(path + ": train id " + std::to_string(id) + " unlabeled");
    by_class[static_cast<std::size_t>(*label)].push_back(id);
  }
  Rng rng(seed);
  for (int c = 0; c < labels.num_classes(); ++c) {
    auto& members = by_class[static_cast<std::size_t>(c)];
    if (static_cast<int>(members.size()) < k_shots) {
      throw InsufficientNodes("fixed split class " + std::to_string(c) +
                              " has only " + std::to_string(members.size()) + " train nodes");
    }
    rng.shuffle(members);
    split.train_ids.insert(split.train_ids.end(), members.begin(),
                           members.begin() + k_shots);
  }
  std::sort(split.train_ids.begin(), split.train_ids.end());
  return split;
}

// Appends generated nodes after the raw ones (contiguous ids) and inserts
// the requested gen-raw edges symmetrically. The raw-raw block of the new
// adjacency is identical to the input's.
inline TextAttributedGraph merge_generated_nodes(
    const TextAttributedGraph& graph, const std::vector<GeneratedSample>& samples,
    const std::vector<std::pair<int, NodeId>>& new_edges) {
  TextAttributedGraph merged;
  merged.num_raw_nodes = graph.num_raw_nodes;
  merged.num_nodes = graph.num_raw_nodes + static_cast<int>(samples.size());
  merged.texts.assign(graph.texts.begin(),
                      graph.texts.begin() + graph.num_raw_nodes);
  merged.labels.assign(graph.labels.begin(),
                       graph.labels.begin() + graph.num_raw_nodes);
  for (const auto& s : samples) {
    merged.texts.push_back(s.text());
    merged.labels.push_back(s.class_id);
  }

  std::set<Edge> edge_set;
  for (const auto& e : graph.edges) {
    if (e.first < graph.num_raw_nodes && e.second < graph.num_raw_nodes) {
      edge_set.insert(e);
    }
  }
  for (const auto& [gen_index, raw_id] : new_edges) {
    if (gen_index < 0 || gen_index >= static_cast<int>(samples.size())) {
      throw IndexOutOfRange("gen index " + std::to_string(gen_index));
    }
    if (raw_id < 0 || raw_id >= graph.num_raw_nodes) {
      throw IndexOutOfRange("raw node id " + std::to_string(raw_id));
    }
    const NodeId gen_id = graph.num_raw_nodes + gen_index;
    edge_set.insert({std::min(raw_id, gen_id), std::max(raw_id, gen_id)});
  }
  merged.edges.assign(edge_set.begin(), edge_set.end());
  merged.adjacency = build_adjacency(merged.num_nodes, merged.edges);
  return merged;
}

}  // namespace llm4ng
