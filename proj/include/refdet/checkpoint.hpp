#pragma once

#include <string>
#include <utility>
#include <vector>

#include "refdet/tensor.hpp"

namespace refdet {

// Single-file binary archive of named float arrays plus an architecture
// fingerprint. Loading verifies magic/version; fingerprint policy is the
// caller's (the detector rejects mismatches, tools may just inspect).
struct CheckpointEntry {
  std::string name;
  std::vector<int> shape;
  std::vector<float> data;
};

struct Checkpoint {
  std::string fingerprint;
  std::vector<CheckpointEntry> entries;

  const CheckpointEntry* find(const std::string& name) const;
};

void save_checkpoint(const std::string& path, const std::string& fingerprint,
                     const std::vector<std::pair<std::string, Tensor>>& params,
                     const std::vector<std::pair<std::string, Tensor>>& buffers);

Checkpoint load_checkpoint(const std::string& path);

}  // namespace refdet
