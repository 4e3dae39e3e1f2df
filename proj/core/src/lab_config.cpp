#include "detm/lab_config.hpp"

#include <stdexcept>
#include <unordered_set>

#include "serialize.hpp"

namespace detm {

using detail::json;

LabConfig lab_config_defaults() { return LabConfig{}; }

namespace {

void apply_json(LabConfig& c, const json& j) {
  static const std::unordered_set<std::string> known = {
      "topic_count", "window_count", "delta_alpha", "delta_eta", "delta_ratio",
      "encoder_hidden", "rnn_hidden", "encoder_dropout",
      "learning_rate", "batch_size", "epochs", "reweight", "recompute", "seed",
      "gradient_clip_norm", "select_best",
      "max_vocabulary_size", "max_word_sub_occurrence", "max_subdoc_tokens",
      "embed_dim", "sgns_context_radius", "sgns_negatives", "sgns_epochs",
      "sgns_learning_rate", "sgns_workers"};
  if (!j.is_object()) throw std::runtime_error("configuration must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) {
      throw std::runtime_error("unknown configuration key \"" + key + "\"");
    }
    (void)value;
  }
  if (j.contains("topic_count")) c.model.topic_count = j["topic_count"].get<int>();
  if (j.contains("window_count")) c.model.window_count = j["window_count"].get<int>();
  if (j.contains("delta_alpha")) c.model.delta_alpha = j["delta_alpha"].get<double>();
  if (j.contains("delta_eta")) c.model.delta_eta = j["delta_eta"].get<double>();
  if (j.contains("delta_ratio")) c.model.set_delta_ratio(j["delta_ratio"].get<double>());
  if (j.contains("encoder_hidden")) c.model.encoder_hidden = j["encoder_hidden"].get<int>();
  if (j.contains("rnn_hidden")) c.model.rnn_hidden = j["rnn_hidden"].get<int>();
  if (j.contains("encoder_dropout")) c.model.encoder_dropout = j["encoder_dropout"].get<double>();

  if (j.contains("learning_rate")) c.training.learning_rate = j["learning_rate"].get<double>();
  if (j.contains("batch_size")) c.training.batch_size = j["batch_size"].get<int>();
  if (j.contains("epochs")) c.training.epochs = j["epochs"].get<int>();
  if (j.contains("reweight")) c.training.reweight = j["reweight"].get<bool>();
  if (j.contains("recompute")) c.training.recompute = j["recompute"].get<bool>();
  if (j.contains("seed")) c.training.seed = j["seed"].get<std::uint64_t>();
  if (j.contains("gradient_clip_norm")) c.training.gradient_clip_norm = j["gradient_clip_norm"].get<double>();
  if (j.contains("select_best")) c.training.select_best = j["select_best"].get<bool>();

  if (j.contains("max_vocabulary_size")) c.data.max_vocabulary_size = j["max_vocabulary_size"].get<int>();
  if (j.contains("max_word_sub_occurrence")) c.data.max_word_sub_occurrence = j["max_word_sub_occurrence"].get<double>();
  if (j.contains("max_subdoc_tokens")) c.data.max_subdoc_tokens = j["max_subdoc_tokens"].get<int>();

  if (j.contains("embed_dim")) c.embedding.dimension = j["embed_dim"].get<int>();
  if (j.contains("sgns_context_radius")) c.embedding.context_radius = j["sgns_context_radius"].get<int>();
  if (j.contains("sgns_negatives")) c.embedding.negatives = j["sgns_negatives"].get<int>();
  if (j.contains("sgns_epochs")) c.embedding.epochs = j["sgns_epochs"].get<int>();
  if (j.contains("sgns_learning_rate")) c.embedding.learning_rate = j["sgns_learning_rate"].get<double>();
  if (j.contains("sgns_workers")) c.embedding.workers = j["sgns_workers"].get<int>();
}

}  // namespace

LabConfig lab_config_from_json_text(const std::string& text) {
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded()) throw std::runtime_error("invalid configuration JSON");
  LabConfig c = lab_config_defaults();
  apply_json(c, j);
  return c;
}

LabConfig load_lab_config(const std::filesystem::path& path) {
  return lab_config_from_json_text(detail::read_file(path));
}

std::string lab_config_to_json_text(const LabConfig& c) {
  json j{{"topic_count", c.model.topic_count},
         {"window_count", c.model.window_count},
         {"delta_alpha", c.model.delta_alpha},
         {"delta_eta", c.model.delta_eta},
         {"encoder_hidden", c.model.encoder_hidden},
         {"rnn_hidden", c.model.rnn_hidden},
         {"encoder_dropout", c.model.encoder_dropout},
         {"learning_rate", c.training.learning_rate},
         {"batch_size", c.training.batch_size},
         {"epochs", c.training.epochs},
         {"reweight", c.training.reweight},
         {"recompute", c.training.recompute},
         {"seed", c.training.seed},
         {"gradient_clip_norm", c.training.gradient_clip_norm},
         {"select_best", c.training.select_best},
         {"max_vocabulary_size", c.data.max_vocabulary_size},
         {"max_word_sub_occurrence", c.data.max_word_sub_occurrence},
         {"max_subdoc_tokens", c.data.max_subdoc_tokens},
         {"embed_dim", c.embedding.dimension},
         {"sgns_context_radius", c.embedding.context_radius},
         {"sgns_negatives", c.embedding.negatives},
         {"sgns_epochs", c.embedding.epochs},
         {"sgns_learning_rate", c.embedding.learning_rate},
         {"sgns_workers", c.embedding.workers}};
  return j.dump(2);
}

}  // namespace detm
