#include "detm/sweep.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <future>
#include <set>
#include <sstream>
#include <stdexcept>

#include "detm/rng.hpp"
#include "serialize.hpp"

namespace detm {

using detail::json;

std::string axis_name(SweepAxis axis) {
  switch (axis) {
    case SweepAxis::recompute: return "recompute";
    case SweepAxis::reweight: return "reweight";
    case SweepAxis::delta_ratio: return "delta_ratio";
    case SweepAxis::window_count: return "window_count";
    case SweepAxis::vocab_size: return "vocab_size";
    case SweepAxis::topic_count: return "topic_count";
  }
  throw std::runtime_error("unreachable axis");
}

SweepAxis axis_from_name(const std::string& name) {
  if (name == "recompute") return SweepAxis::recompute;
  if (name == "reweight") return SweepAxis::reweight;
  if (name == "delta_ratio") return SweepAxis::delta_ratio;
  if (name == "window_count") return SweepAxis::window_count;
  if (name == "vocab_size") return SweepAxis::vocab_size;
  if (name == "topic_count") return SweepAxis::topic_count;
  throw std::runtime_error("unknown sweep axis \"" + name + "\"");
}

AxisValue AxisValue::boolean(bool v) {
  AxisValue a;
  a.kind = Kind::boolean;
  a.b = v;
  return a;
}
AxisValue AxisValue::integer(std::int64_t v) {
  AxisValue a;
  a.kind = Kind::integer;
  a.i = v;
  return a;
}
AxisValue AxisValue::real(double v) {
  AxisValue a;
  a.kind = Kind::real;
  a.d = v;
  return a;
}

double AxisValue::sort_key() const {
  switch (kind) {
    case Kind::boolean: return b ? 1.0 : 0.0;
    case Kind::integer: return static_cast<double>(i);
    case Kind::real: return d;
  }
  return 0.0;
}

static std::string shortest_double(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string AxisValue::label() const {
  switch (kind) {
    case Kind::boolean:
      return b ? "True" : "False";
    case Kind::integer:
      return std::to_string(i);
    case Kind::real: {
      // Ratios below one render as unit fractions, matching the paper grids.
      if (d > 0.0 && d < 1.0) {
        const double inv = 1.0 / d;
        const double nearest = std::round(inv);
        if (nearest >= 2.0 && nearest <= 64.0 && std::abs(inv - nearest) < 1e-6) {
          return "1/" + std::to_string(static_cast<std::int64_t>(nearest));
        }
      }
      if (d == std::round(d) && std::abs(d) < 1e15) {
        return std::to_string(static_cast<std::int64_t>(d));
      }
      return shortest_double(d);
    }
  }
  return {};
}

std::string AxisValue::canonical() const {
  switch (kind) {
    case Kind::boolean: return b ? "b:1" : "b:0";
    case Kind::integer: return "i:" + std::to_string(i);
    case Kind::real: return "r:" + shortest_double(d);
  }
  return {};
}

static json axis_value_to_json(const AxisValue& v) {
  switch (v.kind) {
    case AxisValue::Kind::boolean: return v.b;
    case AxisValue::Kind::integer: return v.i;
    case AxisValue::Kind::real: return v.d;
  }
  return nullptr;
}

static AxisValue axis_value_from_json(const json& j) {
  if (j.is_boolean()) return AxisValue::boolean(j.get<bool>());
  if (j.is_number_integer()) return AxisValue::integer(j.get<std::int64_t>());
  if (j.is_number()) return AxisValue::real(j.get<double>());
  throw std::runtime_error("axis values must be booleans or numbers");
}

void SweepPlan::validate() const {
  if (corpora.empty()) throw std::runtime_error("plan lists no corpora");
  if (values.empty()) throw std::runtime_error("plan lists no axis values");
  if (seeds.empty()) throw std::runtime_error("plan lists no seeds");
  std::set<std::string> seen;
  for (const auto& v : values) {
    if (!seen.insert(v.canonical()).second) {
      throw std::runtime_error("duplicate axis value " + v.label());
    }
    switch (axis) {
      case SweepAxis::recompute:
      case SweepAxis::reweight:
        if (v.kind != AxisValue::Kind::boolean) {
          throw std::runtime_error(axis_name(axis) + " values must be booleans");
        }
        break;
      case SweepAxis::delta_ratio:
        if (v.sort_key() <= 0.0) {
          throw std::runtime_error("delta ratios must be positive");
        }
        break;
      case SweepAxis::window_count:
      case SweepAxis::vocab_size:
      case SweepAxis::topic_count:
        if (v.kind != AxisValue::Kind::integer || v.i < 1) {
          throw std::runtime_error(axis_name(axis) + " values must be positive integers");
        }
        break;
    }
  }
}

static json plan_to_json(const SweepPlan& plan) {
  json values = json::array();
  for (const auto& v : plan.values) values.push_back(axis_value_to_json(v));
  json seeds = json::array();
  for (auto s : plan.seeds) seeds.push_back(s);
  return json{{"version", detail::kFormatVersion},
              {"kind", "sweep_plan"},
              {"corpora", plan.corpora},
              {"axis", axis_name(plan.axis)},
              {"values", std::move(values)},
              {"base", json::parse(lab_config_to_json_text(plan.base))},
              {"seeds", std::move(seeds)}};
}

std::string SweepPlan::id() const {
  return hash_hex(fnv1a(plan_to_json(*this).dump()));
}

SweepPlan load_plan(const std::filesystem::path& path) {
  json j = detail::parse_json_file(path);
  if (j.contains("version")) detail::check_version(j, path);
  SweepPlan plan;
  plan.corpora = j.at("corpora").get<std::vector<std::string>>();
  plan.axis = axis_from_name(j.at("axis").get<std::string>());
  for (const auto& v : j.at("values")) plan.values.push_back(axis_value_from_json(v));
  if (j.contains("base")) {
    plan.base = lab_config_from_json_text(j.at("base").dump());
  } else {
    plan.base = lab_config_defaults();
  }
  if (j.contains("seeds")) plan.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  plan.validate();
  return plan;
}

void save_plan(const SweepPlan& plan, const std::filesystem::path& path) {
  detail::write_json_file(path, plan_to_json(plan));
}

LabConfig apply_axis_value(const LabConfig& base, SweepAxis axis, const AxisValue& value) {
  LabConfig c = base;
  switch (axis) {
    case SweepAxis::recompute: c.training.recompute = value.b; break;
    case SweepAxis::reweight: c.training.reweight = value.b; break;
    case SweepAxis::delta_ratio: c.model.set_delta_ratio(value.sort_key()); break;
    case SweepAxis::window_count: c.model.window_count = static_cast<int>(value.i); break;
    case SweepAxis::vocab_size: c.data.max_vocabulary_size = static_cast<int>(value.i); break;
    case SweepAxis::topic_count: c.model.topic_count = static_cast<int>(value.i); break;
  }
  return c;
}

std::vector<SweepCell> enumerate_cells(const SweepPlan& plan) {
  std::vector<SweepCell> cells;
  std::size_t index = 0;
  for (const auto& corpus : plan.corpora) {
    for (const auto& value : plan.values) {
      for (auto seed : plan.seeds) {
        cells.push_back(SweepCell{index++, corpus, value, seed});
      }
    }
  }
  return cells;
}

std::string cell_key(const SweepPlan& plan, const SweepCell& cell) {
  std::uint64_t h = fnv1a(plan.id());
  h = fnv1a_extend(h, cell.corpus);
  h = fnv1a_extend(h, cell.value.canonical());
  h = fnv1a_extend(h, std::to_string(cell.seed));
  return hash_hex(h);
}

namespace {

json record_to_json(const SweepRecord& r) {
  json j{{"key", r.key},       {"plan_id", r.plan_id}, {"corpus", r.corpus},
         {"axis", r.axis},     {"value", json()},      {"seed", r.seed},
         {"status", r.status}, {"error", r.error},     {"checkpoint", r.checkpoint_path}};
  j["value"] = axis_value_to_json(r.value);
  if (r.report) {
    j["report"] = json{{"per_word_nll", r.report->per_word_nll},
                       {"word_count", r.report->word_count},
                       {"fingerprint", r.report->fingerprint},
                       {"seconds", r.report->seconds}};
    if (r.report->npmi) {
      j["report"]["npmi"] = *r.report->npmi;
    } else {
      j["report"]["npmi"] = nullptr;
    }
  }
  return j;
}

SweepRecord record_from_json(const json& j) {
  SweepRecord r;
  r.key = j.at("key").get<std::string>();
  r.plan_id = j.at("plan_id").get<std::string>();
  r.corpus = j.at("corpus").get<std::string>();
  r.axis = j.at("axis").get<std::string>();
  r.value = axis_value_from_json(j.at("value"));
  r.seed = j.at("seed").get<std::uint64_t>();
  r.status = j.at("status").get<std::string>();
  r.error = j.value("error", "");
  r.checkpoint_path = j.value("checkpoint", "");
  if (j.contains("report") && !j.at("report").is_null()) {
    EvaluationReport rep;
    const json& rj = j.at("report");
    rep.per_word_nll = rj.at("per_word_nll").get<double>();
    rep.word_count = rj.at("word_count").get<std::int64_t>();
    rep.fingerprint = rj.value("fingerprint", "");
    rep.seconds = rj.value("seconds", 0.0);
    if (rj.contains("npmi") && !rj.at("npmi").is_null()) {
      rep.npmi = rj.at("npmi").get<double>();
    }
    r.report = std::move(rep);
  }
  return r;
}

}  // namespace

std::string record_to_json_text(const SweepRecord& record) {
  return record_to_json(record).dump();
}

SweepRecord record_from_json_text(const std::string& text) {
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded()) throw std::runtime_error("invalid record JSON");
  return record_from_json(j);
}

ResultStore ResultStore::open(const std::filesystem::path& path) {
  ResultStore store;
  store.path_ = path;
  if (std::filesystem::exists(path)) {
    std::ifstream in(path);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      json j = json::parse(line, nullptr, false);
      if (j.is_discarded()) {
        throw std::runtime_error("corrupt result store line " +
                                 std::to_string(line_no) + " in " + path.string());
      }
      SweepRecord r = record_from_json(j);
      if (store.keys_.count(r.key)) {
        throw std::runtime_error("duplicate result key " + r.key + " in " + path.string());
      }
      store.keys_.emplace(r.key, store.records_.size());
      store.records_.push_back(std::move(r));
    }
  }
  return store;
}

void ResultStore::append(const SweepRecord& record) {
  if (keys_.count(record.key)) {
    throw std::runtime_error("result key already recorded: " + record.key);
  }
  if (!path_.empty()) {
    if (path_.has_parent_path()) {
      std::filesystem::create_directories(path_.parent_path());
    }
    std::ofstream out(path_, std::ios::app);
    if (!out) throw std::runtime_error("cannot append to result store: " + path_.string());
    out << record_to_json(record).dump() << '\n';
    out.flush();
    if (!out) throw std::runtime_error("short write to result store: " + path_.string());
  }
  keys_.emplace(record.key, records_.size());
  records_.push_back(record);
}

std::size_t ResultStore::failed_count() const {
  std::size_t n = 0;
  for (const auto& r : records_) {
    if (r.status != "ok") ++n;
  }
  return n;
}

SweepRecord run_cell(const SweepPlan& plan, const SweepResources& resources,
                     const SweepCell& cell) {
  SweepRecord record;
  record.key = cell_key(plan, cell);
  record.plan_id = plan.id();
  record.corpus = cell.corpus;
  record.axis = axis_name(plan.axis);
  record.value = cell.value;
  record.seed = cell.seed;

  LabConfig cfg = apply_axis_value(plan.base, plan.axis, cell.value);
  cfg.training.seed = cell.seed;

  auto it = resources.corpus_paths.find(cell.corpus);
  if (it == resources.corpus_paths.end()) {
    throw std::runtime_error("no corpus path registered for \"" + cell.corpus + "\"");
  }
  const Corpus corpus = load_corpus(it->second);

  const auto splits = split_corpus(corpus, SplitRatios{}, cfg.training.seed);
  auto train_subs = make_subdocuments(splits[0], cfg.data.max_subdoc_tokens);
  auto val_subs = make_subdocuments(splits[1], cfg.data.max_subdoc_tokens);
  auto test_subs = make_subdocuments(splits[2], cfg.data.max_subdoc_tokens);

  const Vocabulary vocab = build_vocabulary(train_subs, cfg.data.max_vocabulary_size,
                                            cfg.data.max_word_sub_occurrence);
  const WindowSpec windows = assign_windows(corpus, cfg.model.window_count);
  apply_windows(windows, train_subs);
  apply_windows(windows, val_subs);
  apply_windows(windows, test_subs);

  SgnsConfig sgns = cfg.embedding;
  sgns.seed = derive_seed(cfg.training.seed, "embeddings");
  std::vector<SubDocument> embed_corpus = train_subs;
  embed_corpus.insert(embed_corpus.end(), val_subs.begin(), val_subs.end());
  EmbeddingMatrix rho = train_skipgram(embed_corpus, vocab, sgns);

  const WindowStats train_stats =
      smooth_window_stats(window_word_stats(train_subs, vocab, windows));

  cfg.model.vocab_size = static_cast<int>(vocab.size());
  cfg.model.embed_dim = rho.dimension;
  DETMParameters params = init_model(cfg.model, std::move(rho), cfg.training.seed);

  auto train_bows = to_bags_of_words(train_subs, vocab);
  std::erase_if(train_bows, [](const BagOfWords& b) { return b.empty(); });
  auto val_bows = to_bags_of_words(val_subs, vocab);
  std::erase_if(val_bows, [](const BagOfWords& b) { return b.empty(); });
  auto test_bows = to_bags_of_words(test_subs, vocab);

  FrozenStatsProvider provider(train_stats, vocab, windows);
  TrainResult trained =
      train(std::move(params), train_bows, val_subs, val_bows, provider, cfg.training);

  const WindowStats eval_stats = cfg.training.recompute && !test_subs.empty()
                                     ? provider.recomputed(test_subs)
                                     : provider.training();
  EvaluationReport report = per_word_nll(trained.params, test_bows, eval_stats);
  report.npmi = npmi_coherence(trained.params, test_subs, vocab);
  report.fingerprint = fingerprint_json_text(lab_config_to_json_text(cfg) + "|" +
                                             cell.corpus + "|" +
                                             std::to_string(cell.seed));

  if (!resources.output_dir.empty()) {
    std::filesystem::create_directories(resources.output_dir / "checkpoints");
    const auto ckpt_path =
        resources.output_dir / "checkpoints" / (record.key + ".json");
    save_checkpoint(Checkpoint{trained.params, cfg.training, trained.history,
                               vocab, train_stats, windows},
                    ckpt_path);
    record.checkpoint_path = ckpt_path.string();
  }
  record.status = "ok";
  record.report = std::move(report);
  return record;
}

std::size_t run_sweep(const SweepPlan& plan, const SweepResources& resources,
                      ResultStore& store, const CellRunner& runner) {
  plan.validate();
  const CellRunner effective =
      runner ? runner
             : CellRunner([&](const SweepCell& cell) {
                 return run_cell(plan, resources, cell);
               });

  std::vector<SweepCell> pending;
  for (const auto& cell : enumerate_cells(plan)) {
    if (!store.contains(cell_key(plan, cell))) pending.push_back(cell);
  }

  const int workers = std::max(1, resources.max_concurrent);
  for (std::size_t at = 0; at < pending.size(); at += static_cast<std::size_t>(workers)) {
    const std::size_t stop =
        std::min(pending.size(), at + static_cast<std::size_t>(workers));
    std::vector<std::future<SweepRecord>> inflight;
    for (std::size_t i = at; i < stop; ++i) {
      const SweepCell& cell = pending[i];
      inflight.push_back(std::async(
          workers == 1 ? std::launch::deferred : std::launch::async,
          [&plan, &effective, cell]() -> SweepRecord {
            try {
              return effective(cell);
            } catch (const std::exception& e) {
              SweepRecord failed;
              failed.key = cell_key(plan, cell);
              failed.plan_id = plan.id();
              failed.corpus = cell.corpus;
              failed.axis = axis_name(plan.axis);
              failed.value = cell.value;
              failed.seed = cell.seed;
              failed.status = "failed";
              failed.error = e.what();
              return failed;
            }
          }));
    }
    for (auto& f : inflight) {
      store.append(f.get());  // single writer
    }
  }
  return store.failed_count();
}

namespace {

std::string format_cell(double mean) {
  std::ostringstream ss;
  ss.setf(std::ios::fixed);
  ss.precision(2);
  ss << mean;
  return ss.str();
}

struct AxisTable {
  std::string axis;
  std::vector<AxisValue> columns;
  std::vector<std::string> corpora;
  // cells[row][col]: rounded display value, or empty when missing
  std::vector<std::vector<std::string>> cells;
  std::vector<std::optional<std::size_t>> bold;  // per row, column index
};

AxisTable build_axis_table(const std::string& axis,
                           const std::vector<const SweepRecord*>& records,
                           double two_sigma) {
  AxisTable table;
  table.axis = axis;

  std::vector<AxisValue> columns;
  std::set<std::string> seen_cols;
  std::set<std::string> corpora;
  for (const auto* r : records) {
    if (seen_cols.insert(r->value.canonical()).second) columns.push_back(r->value);
    corpora.insert(r->corpus);
  }
  std::sort(columns.begin(), columns.end(), [](const AxisValue& a, const AxisValue& b) {
    return a.sort_key() < b.sort_key();
  });
  table.columns = columns;
  table.corpora.assign(corpora.begin(), corpora.end());

  for (const auto& corpus : table.corpora) {
    std::vector<std::string> row_cells(columns.size());
    std::vector<double> present_values;
    std::vector<std::size_t> present_cols;
    for (std::size_t c = 0; c < columns.size(); ++c) {
      double sum = 0.0;
      int n = 0;
      for (const auto* r : records) {
        if (r->corpus == corpus && r->value == columns[c] && r->status == "ok" &&
            r->report) {
          sum += r->report->per_word_nll;
          ++n;
        }
      }
      if (n > 0) {
        const std::string shown = format_cell(sum / n);
        row_cells[c] = shown;
        present_values.push_back(std::stod(shown));  // compare displayed values
        present_cols.push_back(c);
      }
    }
    std::optional<std::size_t> bold;
    if (present_values.size() >= 2) {
      if (auto best = mark_best(present_values, two_sigma)) {
        bold = present_cols[*best];
      }
    }
    table.cells.push_back(std::move(row_cells));
    table.bold.push_back(bold);
  }
  return table;
}

void render_text(const AxisTable& t, std::ostringstream& out) {
  out << "Axis: " << t.axis << "\n";
  std::vector<std::size_t> widths;
  widths.push_back(6);  // "corpus"
  for (const auto& c : t.columns) widths.push_back(std::max<std::size_t>(c.label().size(), 6));
  for (std::size_t r = 0; r < t.corpora.size(); ++r) {
    widths[0] = std::max(widths[0], t.corpora[r].size());
    for (std::size_t c = 0; c < t.columns.size(); ++c) {
      std::size_t w = t.cells[r][c].empty() ? 1 : t.cells[r][c].size();
      if (t.bold[r] && *t.bold[r] == c) w += 2;
      widths[c + 1] = std::max(widths[c + 1], w);
    }
  }
  auto pad = [](const std::string& s, std::size_t w) {
    return s + std::string(w > s.size() ? w - s.size() : 0, ' ');
  };
  out << pad("corpus", widths[0]);
  for (std::size_t c = 0; c < t.columns.size(); ++c) {
    out << "  " << pad(t.columns[c].label(), widths[c + 1]);
  }
  out << "\n";
  for (std::size_t r = 0; r < t.corpora.size(); ++r) {
    out << pad(t.corpora[r], widths[0]);
    for (std::size_t c = 0; c < t.columns.size(); ++c) {
      std::string cell = t.cells[r][c].empty() ? "—" : t.cells[r][c];
      if (t.bold[r] && *t.bold[r] == c) cell = "*" + cell + "*";
      out << "  " << pad(cell, widths[c + 1]);
    }
    out << "\n";
  }
  out << "\n";
}

void render_latex(const AxisTable& t, std::ostringstream& out) {
  out << "\\begin{table}[H]\n\\centering\n\\begin{tabular}{l";
  for (std::size_t c = 0; c < t.columns.size(); ++c) out << "r";
  out << "}\n\\toprule\n& \\multicolumn{" << t.columns.size() << "}{c}{" << t.axis
      << "} \\\\\nCorpus";
  for (const auto& c : t.columns) out << " & " << c.label();
  out << " \\\\\n\\midrule\n";
  for (std::size_t r = 0; r < t.corpora.size(); ++r) {
    out << t.corpora[r];
    for (std::size_t c = 0; c < t.columns.size(); ++c) {
      std::string cell = t.cells[r][c].empty() ? "---" : t.cells[r][c];
      if (t.bold[r] && *t.bold[r] == c) cell = "\\textbf{" + cell + "}";
      out << " & " << cell;
    }
    out << " \\\\\n";
  }
  out << "\\bottomrule\n\\end{tabular}\n\\end{table}\n\n";
}

}  // namespace

ReportDocument emit_report(const ResultStore& store, double two_sigma) {
  if (store.records().empty()) {
    throw std::runtime_error("result store is empty; nothing to report");
  }
  // Group records by axis, first-seen order.
  std::vector<std::string> axes;
  std::map<std::string, std::vector<const SweepRecord*>> by_axis;
  for (const auto& r : store.records()) {
    if (!by_axis.count(r.axis)) axes.push_back(r.axis);
    by_axis[r.axis].push_back(&r);
  }

  std::ostringstream text, latex;
  for (const auto& axis : axes) {
    const AxisTable table = build_axis_table(axis, by_axis[axis], two_sigma);
    render_text(table, text);
    render_latex(table, latex);
  }
  return ReportDocument{text.str(), latex.str()};
}

}  // namespace detm
