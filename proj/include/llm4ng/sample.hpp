#pragma once

#include <string>

namespace llm4ng {

// Where a generated sample came from: enough to replay it from the cache.
struct SampleProvenance {
  std::string template_id;
  std::string model;
  double temperature = 1.0;
  std::uint64_t seed = 0;
  int replicate = 0;
  std::string cache_key;
};

// One LLM-produced labeled sample. `text()` is the node text used for
// embedding and graph insertion.
struct GeneratedSample {
  int class_id = -1;
  std::string title;
  std::string abstract;
  SampleProvenance provenance;

  std::string text() const { return title + " " + abstract; }
};

}  // namespace llm4ng
