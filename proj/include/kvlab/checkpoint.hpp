#pragma once

#include <filesystem>
#include <optional>

#include "kvlab/corpus.hpp"
#include "kvlab/model.hpp"

namespace kvlab {

// Versioned binary checkpoint of config + parameters, optionally carrying the
// tokenizer vocabulary so one file is enough to run attacks and analysis.
// Round-trips bit-exactly (raw IEEE-754 doubles).
void save_model(const std::filesystem::path& path, const Model& m, const Vocab* vocab = nullptr);

struct LoadedModel {
  Model model;
  std::optional<Vocab> vocab;
};

LoadedModel load_model(const std::filesystem::path& path);

}  // namespace kvlab
