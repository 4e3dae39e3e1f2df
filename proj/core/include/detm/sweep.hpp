#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "detm/evaluator.hpp"
#include "detm/lab_config.hpp"

namespace detm {

enum class SweepAxis {
  recompute,
  reweight,
  delta_ratio,
  window_count,
  vocab_size,
  topic_count,
};
std::string axis_name(SweepAxis axis);
SweepAxis axis_from_name(const std::string& name);

// One grid point on a sweep axis.
struct AxisValue {
  enum class Kind { boolean, integer, real } kind = Kind::integer;
  bool b = false;
  std::int64_t i = 0;
  double d = 0.0;

  static AxisValue boolean(bool v);
  static AxisValue integer(std::int64_t v);
  static AxisValue real(double v);

  double sort_key() const;
  std::string label() const;      // paper-style column header ("False", "1/9", "80")
  std::string canonical() const;  // stable token for hashing and equality
  bool operator==(const AxisValue& other) const {
    return canonical() == other.canonical();
  }
};

// One-axis-at-a-time experiment over the default configuration.
struct SweepPlan {
  std::vector<std::string> corpora;
  SweepAxis axis = SweepAxis::recompute;
  std::vector<AxisValue> values;
  LabConfig base;                   // defaults, possibly overridden by the plan file
  std::vector<std::uint64_t> seeds = {1};

  void validate() const;
  std::string id() const;  // content hash of the whole plan
};

SweepPlan load_plan(const std::filesystem::path& path);
void save_plan(const SweepPlan& plan, const std::filesystem::path& path);

// Applies one grid value on top of the base configuration.
LabConfig apply_axis_value(const LabConfig& base, SweepAxis axis, const AxisValue& value);

struct SweepCell {
  std::size_t index = 0;
  std::string corpus;
  AxisValue value;
  std::uint64_t seed = 0;
};
std::vector<SweepCell> enumerate_cells(const SweepPlan& plan);
std::string cell_key(const SweepPlan& plan, const SweepCell& cell);

struct SweepRecord {
  std::string key;
  std::string plan_id;
  std::string corpus;
  std::string axis;
  AxisValue value;
  std::uint64_t seed = 0;
  std::string status;  // "ok" or "failed"
  std::string error;
  std::optional<EvaluationReport> report;
  std::string checkpoint_path;
};

// One-line JSON form, as stored; also the wire format between the sweep
// orchestrator and its worker processes.
std::string record_to_json_text(const SweepRecord& record);
SweepRecord record_from_json_text(const std::string& text);

// Append-only JSON-lines store; (plan, corpus, value, seed) keys are unique.
class ResultStore {
 public:
  static ResultStore open(const std::filesystem::path& path);

  bool contains(const std::string& key) const { return keys_.count(key) > 0; }
  void append(const SweepRecord& record);
  const std::vector<SweepRecord>& records() const { return records_; }
  const std::filesystem::path& path() const { return path_; }
  std::size_t failed_count() const;

 private:
  std::filesystem::path path_;
  std::vector<SweepRecord> records_;
  std::map<std::string, std::size_t> keys_;
};

struct SweepResources {
  std::map<std::string, std::filesystem::path> corpus_paths;
  std::filesystem::path output_dir;
  int max_concurrent = 1;
};

// Trains and evaluates one grid cell end to end: split, shard, vocabulary,
// embeddings, model, per-word NLL and NPMI on the test split, checkpoint.
SweepRecord run_cell(const SweepPlan& plan, const SweepResources& resources,
                     const SweepCell& cell);

// Runs every cell not already recorded. Individual failures become "failed"
// records and the sweep continues. Returns the number of failed records in
// the store afterwards.
using CellRunner = std::function<SweepRecord(const SweepCell&)>;
std::size_t run_sweep(const SweepPlan& plan, const SweepResources& resources,
                      ResultStore& store, const CellRunner& runner = nullptr);

// Paper-style tables: one per axis present in the store, corpora as rows,
// mean NLL over seeds to two decimals, best cell marked when it clears the
// significance threshold.
struct ReportDocument {
  std::string text;
  std::string latex;
};
ReportDocument emit_report(const ResultStore& store, double two_sigma);

}  // namespace detm
