#pragma once

#include <filesystem>
#include <string>

#include "detm/embeddings.hpp"
#include "detm/model.hpp"
#include "detm/trainer.hpp"

namespace detm {

struct DataConfig {
  int max_vocabulary_size = 10000;
  double max_word_sub_occurrence = 0.5;
  int max_subdoc_tokens = 100;
};

// One run's full configuration. The JSON form is a flat object whose keys
// mirror the field names below; unknown keys are rejected.
struct LabConfig {
  ModelConfig model;
  TrainingConfig training;
  DataConfig data;
  SgnsConfig embedding;  // embedding.dimension doubles as the model embed_dim
};

LabConfig lab_config_defaults();
LabConfig lab_config_from_json_text(const std::string& text);
LabConfig load_lab_config(const std::filesystem::path& path);
std::string lab_config_to_json_text(const LabConfig& config);

}  // namespace detm
