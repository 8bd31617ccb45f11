#pragma once

#include <cstdint>
#include <filesystem>

#include "tipsfuse/dataset.hpp"
#include "tipsfuse/model.hpp"

namespace tipsfuse::model {

// Everything needed to rerun inference on raw dataset files.
struct Checkpoint {
  Model model;
  data::FeatureNormalizer normalizer;
  std::uint64_t group_hash = 0;
  std::uint64_t seed = 0;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
// Throws DataError on malformed files or missing or misshapen parameters.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace tipsfuse::model
