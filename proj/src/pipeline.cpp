#include "evidseg/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <exception>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>

#include <json.hpp>

#include "evidseg/io_util.hpp"
#include "evidseg/metrics.hpp"
#include "evidseg/pixelgrid.hpp"

namespace evidseg {

namespace fs = std::filesystem;
using ensemble::Mode;

std::string split_name(Split s) {
  switch (s) {
    case Split::Train:
      return "train";
    case Split::Val:
      return "val";
    case Split::Test:
      return "test";
  }
  return "unknown";
}

Split parse_split(std::string_view name) {
  if (name == "train") return Split::Train;
  if (name == "val") return Split::Val;
  if (name == "test") return Split::Test;
  throw std::invalid_argument("unknown split '" + std::string(name) + "'");
}

std::vector<int> DatasetManifest::ids_in(Split split) const {
  std::vector<int> ids;
  for (std::size_t i = 0; i < entries.size(); ++i)
    if (entries[i].split == split) ids.push_back(static_cast<int>(i));
  return ids;
}

void DatasetManifest::save(const fs::path& path) const {
  write_atomically(path, [&](std::ostream& out) {
    out << "# seed " << seed << '\n';
    for (const auto& e : entries)
      out << split_name(e.split) << '\t' << e.image.string() << '\t' << e.label.string() << '\n';
  });
}

DatasetManifest DatasetManifest::load(const fs::path& path) {
  std::istringstream in(read_text_file(path));
  DatasetManifest m;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (line.starts_with("# seed ")) {
      m.seed = std::stoull(line.substr(7));
      continue;
    }
    std::istringstream row(line);
    std::string split, image, label;
    if (!std::getline(row, split, '\t') || !std::getline(row, image, '\t') || !std::getline(row, label))
      throw IoError(path, "malformed manifest line " + std::to_string(lineno));
    m.entries.push_back({image, label, parse_split(split)});
  }
  return m;
}

std::vector<std::pair<fs::path, fs::path>> read_dataset_list(const fs::path& path) {
  std::istringstream in(read_text_file(path));
  std::vector<std::pair<fs::path, fs::path>> out;
  const fs::path base = path.parent_path();
  auto resolve = [&](const std::string& s) {
    fs::path p(s);
    return p.is_absolute() ? p : base / p;
  };
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    std::istringstream row(line);
    std::string image, label, extra;
    if (!(row >> image)) continue;
    if (!(row >> label) || (row >> extra))
      throw IoError(path, "line " + std::to_string(lineno) + ": expected 'image_path label_path'");
    out.emplace_back(resolve(image), resolve(label));
  }
  if (out.empty()) throw IoError(path, "dataset list is empty");
  return out;
}

std::array<int, 3> default_split_sizes(int entries) {
  if (entries == 715) return {500, 72, 143};
  const int train = static_cast<int>(std::lround(entries * 500.0 / 715.0));
  const int val = std::min(entries - train, static_cast<int>(std::lround(entries * 72.0 / 715.0)));
  return {train, val, entries - train - val};
}

DatasetManifest split_dataset(const std::vector<std::pair<fs::path, fs::path>>& entries,
                              std::array<int, 3> sizes, std::uint64_t seed) {
  for (int s : sizes)
    if (s < 0) throw std::invalid_argument("split sizes must be non-negative");
  if (sizes[0] + sizes[1] + sizes[2] != static_cast<int>(entries.size()))
    throw std::invalid_argument("split sizes " + std::to_string(sizes[0]) + "/" + std::to_string(sizes[1]) +
                                "/" + std::to_string(sizes[2]) + " do not sum to " +
                                std::to_string(entries.size()) + " entries");
  std::vector<std::size_t> order(entries.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  DatasetManifest m;
  m.seed = seed;
  m.entries.resize(entries.size());
  for (std::size_t i = 0; i < entries.size(); ++i) {
    m.entries[i].image = entries[i].first;
    m.entries[i].label = entries[i].second;
  }
  for (std::size_t r = 0; r < order.size(); ++r) {
    const int rank = static_cast<int>(r);
    m.entries[order[r]].split = rank < sizes[0] ? Split::Train
                                : rank < sizes[0] + sizes[1] ? Split::Val
                                                             : Split::Test;
  }
  return m;
}

MissingArtifact::MissingArtifact(const fs::path& path)
    : std::runtime_error("missing artifact: " + path.string() + " (run the upstream stage first)"),
      path_(path) {}

StaleArtifact::StaleArtifact(const fs::path& path)
    : std::runtime_error("stale artifact: " + path.string() +
                         " no longer matches the hash recorded when it was produced; rerun its stage"),
      path_(path) {}

const std::vector<Stage>& all_stages() {
  static const std::vector<Stage> stages{Stage::Split,   Stage::Segment, Stage::Extract,  Stage::Train,
                                         Stage::Predict, Stage::Fuse,    Stage::Evaluate, Stage::Overlay};
  return stages;
}

std::string stage_name(Stage s) {
  switch (s) {
    case Stage::Split: return "split";
    case Stage::Segment: return "segment";
    case Stage::Extract: return "extract";
    case Stage::Train: return "train";
    case Stage::Predict: return "predict";
    case Stage::Fuse: return "fuse";
    case Stage::Evaluate: return "evaluate";
    case Stage::Overlay: return "overlay";
  }
  return "unknown";
}

Stage parse_stage(std::string_view name) {
  for (Stage s : all_stages())
    if (stage_name(s) == name) return s;
  throw std::invalid_argument("unknown stage '" + std::string(name) + "'");
}

struct Pipeline::Unit {
  std::string key;
  std::vector<fs::path> inputs;
  std::string params;
  std::vector<fs::path> outputs;
  std::function<void()> build;
};

Pipeline::Pipeline(RunConfig config, std::ostream& log) : config_(std::move(config)), log_(log) {}

fs::path Pipeline::manifest_path() const { return workspace() / "manifest.txt"; }
fs::path Pipeline::superpixel_path(int id) const {
  return workspace() / "superpixels" / (std::to_string(id) + ".txt");
}
fs::path Pipeline::patch_tensor_path(std::size_t l, Split s) const {
  return workspace() / "patches" / config_.levels.at(l).name / (split_name(s) + ".bin");
}
fs::path Pipeline::patch_sidecar_path(std::size_t l, Split s) const {
  return workspace() / "patches" / config_.levels.at(l).name / (split_name(s) + ".txt");
}
fs::path Pipeline::model_path(std::size_t l) const {
  return workspace() / "models" / config_.levels.at(l).name / "model.bin";
}
fs::path Pipeline::confusion_path(std::size_t l, Split s) const {
  return workspace() / "models" / config_.levels.at(l).name / ("confusion_" + split_name(s) + ".csv");
}
fs::path Pipeline::accuracy_path(std::size_t l) const {
  return workspace() / "models" / config_.levels.at(l).name / "accuracy.txt";
}
fs::path Pipeline::scores_path(std::size_t l, Split s) const {
  return workspace() / "scores" / config_.levels.at(l).name / (split_name(s) + ".csv");
}
fs::path Pipeline::decisions_path(Mode mode, Split s) const {
  return workspace() / "decisions" / ensemble::mode_name(mode) / (split_name(s) + ".csv");
}
fs::path Pipeline::report_path(Split s, const std::string& suffix) const {
  return workspace() / "reports" / (split_name(s) + suffix);
}

namespace {

fs::path cache_dir(const fs::path& ws) { return ws / ".cache"; }

std::string rel_key(const fs::path& ws, const fs::path& p) {
  const fs::path r = p.lexically_relative(ws);
  return (!r.empty() && *r.begin() != "..") ? r.generic_string() : p.generic_string();
}

}  // namespace

std::string Pipeline::recorded_hash(const fs::path& path) const {
  const fs::path dir = cache_dir(workspace());
  if (!fs::exists(dir)) return {};
  const std::string key = rel_key(workspace(), path);
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.path().extension() != ".json") continue;
    const auto j = nlohmann::json::parse(read_text_file(entry.path()), nullptr, false);
    if (j.is_discarded() || !j.contains("outputs")) continue;
    const auto& outs = j["outputs"];
    if (outs.contains(key)) return outs[key].get<std::string>();
  }
  return {};
}

void Pipeline::require(const fs::path& path) const {
  if (!fs::exists(path)) throw MissingArtifact(path);
}

bool Pipeline::run_unit(const Unit& unit) {
  std::string digest_src = unit.params + "\n";
  for (const auto& in : unit.inputs) {
    require(in);
    const std::string h = sha256_file(in);
    const std::string rec = recorded_hash(in);
    if (!rec.empty() && rec != h) throw StaleArtifact(in);
    digest_src += rel_key(workspace(), in) + ":" + h + "\n";
  }
  const std::string digest = sha256_hex(digest_src);
  const fs::path cache_file = cache_dir(workspace()) / (unit.key + ".json");

  if (fs::exists(cache_file)) {
    const auto j = nlohmann::json::parse(read_text_file(cache_file), nullptr, false);
    bool hit = !j.is_discarded() && j.value("inputs_digest", "") == digest && j.contains("outputs");
    if (hit) {
      for (const auto& out : unit.outputs) {
        const std::string key = rel_key(workspace(), out);
        if (!fs::exists(out) || !j["outputs"].contains(key) ||
            j["outputs"][key].get<std::string>() != sha256_file(out)) {
          hit = false;
          break;
        }
      }
    }
    if (hit) {
      log_ << "[" << unit.key << "] cache hit\n";
      return true;
    }
  }

  log_ << "[" << unit.key << "] building\n";
  const auto start = std::chrono::steady_clock::now();
  unit.build();
  log_ << "[" << unit.key << "] built in "
       << std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count() << " s\n";
  nlohmann::json j;
  j["unit"] = unit.key;
  j["inputs_digest"] = digest;
  j["outputs"] = nlohmann::json::object();
  for (const auto& out : unit.outputs) {
    if (!fs::exists(out)) throw std::logic_error("stage did not produce " + out.string());
    j["outputs"][rel_key(workspace(), out)] = sha256_file(out);
  }
  write_atomically(cache_file, [&](std::ostream& o) { o << j.dump(2) << '\n'; });
  return false;
}

StageReport Pipeline::run(Stage stage, std::optional<Mode> mode) {
  std::vector<Mode> modes;
  if (mode)
    modes = {*mode};
  else
    modes = {Mode::MaxVote, Mode::Weighted, Mode::Dempster};
  switch (stage) {
    case Stage::Split: return run_split();
    case Stage::Segment: return run_segment();
    case Stage::Extract: return run_extract();
    case Stage::Train: return run_train();
    case Stage::Predict: return run_predict();
    case Stage::Fuse: return run_fuse(modes);
    case Stage::Evaluate: return run_evaluate(modes);
    case Stage::Overlay: return run_overlay(modes);
  }
  throw std::logic_error("unhandled stage");
}

std::vector<StageReport> Pipeline::run_all(std::optional<Mode> mode) {
  std::vector<StageReport> out;
  for (Stage s : all_stages()) out.push_back(run(s, mode));
  return out;
}

namespace {

// Runs body(i) for i in [0, n) on OpenMP threads and rethrows the first
// failure (lowest index) on the calling thread.
template <typename F>
void parallel_for_each(int n, F&& body) {
  std::vector<std::exception_ptr> errors(n);
#pragma omp parallel for schedule(dynamic, 1)
  for (int i = 0; i < n; ++i) {
    try {
      body(i);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}


void append(std::vector<fs::path>& a, const std::vector<fs::path>& b) { a.insert(a.end(), b.begin(), b.end()); }

constexpr std::array<Split, 2> kEvalSplits{Split::Val, Split::Test};
constexpr std::array<Split, 3> kAllSplits{Split::Train, Split::Val, Split::Test};

}  // namespace

StageReport Pipeline::run_split() {
  if (config_.dataset.empty()) throw std::invalid_argument("config key 'dataset' is required for the split stage");
  Unit u;
  u.key = "split";
  u.inputs = {config_.dataset};
  const auto list = read_dataset_list(config_.dataset);
  const auto sizes = config_.split_sizes.value_or(default_split_sizes(static_cast<int>(list.size())));
  u.params = "seed=" + std::to_string(config_.seed) + ";sizes=" + std::to_string(sizes[0]) + "," +
             std::to_string(sizes[1]) + "," + std::to_string(sizes[2]);
  u.outputs = {manifest_path()};
  u.build = [&] { split_dataset(list, sizes, config_.seed).save(manifest_path()); };
  StageReport r{1, run_unit(u) ? 1 : 0, u.outputs};
  return r;
}

StageReport Pipeline::run_segment() {
  require(manifest_path());
  const DatasetManifest m = DatasetManifest::load(manifest_path());
  Unit u;
  u.key = "segment";
  u.inputs = {manifest_path()};
  for (const auto& e : m.entries) {
    u.inputs.push_back(e.image);
    u.inputs.push_back(e.label);
  }
  u.params = config_.slic_fingerprint();
  for (std::size_t i = 0; i < m.entries.size(); ++i) u.outputs.push_back(superpixel_path(static_cast<int>(i)));
  u.build = [&] {
    parallel_for_each(static_cast<int>(m.entries.size()), [&](int i) {
      const Image image = load_image(m.entries[i].image);
      load_label_map(m.entries[i].label, image.height(), image.width());
      const SuperpixelMap sp = slic_segment(image, config_.slic);
      save_int_grid(sp.to_grid(), superpixel_path(i));
    });
  };
  return StageReport{1, run_unit(u) ? 1 : 0, u.outputs};
}

StageReport Pipeline::run_extract() {
  require(manifest_path());
  const DatasetManifest m = DatasetManifest::load(manifest_path());
  StageReport report;
  for (std::size_t l = 0; l < config_.levels.size(); ++l) {
    const LevelConfig& level = config_.levels[l];
    Unit u;
    u.key = "extract_" + level.name;
    u.inputs = {manifest_path()};
    for (std::size_t i = 0; i < m.entries.size(); ++i) {
      u.inputs.push_back(m.entries[i].image);
      u.inputs.push_back(m.entries[i].label);
      u.inputs.push_back(superpixel_path(static_cast<int>(i)));
    }
    u.params = config_.level_fingerprint(l);
    for (Split s : kAllSplits) {
      u.outputs.push_back(patch_tensor_path(l, s));
      u.outputs.push_back(patch_sidecar_path(l, s));
    }
    u.build = [&, l] {
      const int n = static_cast<int>(m.entries.size());
      std::vector<PatchBatch> per_image(n);
      parallel_for_each(n, [&](int i) {
        const Image image = load_image(m.entries[i].image);
        const SuperpixelMap sp = SuperpixelMap::from_grid(load_int_grid(superpixel_path(i)));
        if (sp.height() != image.height() || sp.width() != image.width())
          throw IoError(superpixel_path(i), "superpixel map does not match image dimensions");
        const LabelMap labels = load_label_map(m.entries[i].label, image.height(), image.width());
        const auto truth = metrics::superpixel_ground_truth(sp, labels);
        const auto graph = build_adjacency(sp, config_.adjacency);
        const auto boxes = superpixel_boxes(sp);
        PatchBatch batch;
        batch.side = level.side;
        for (int id = 0; id < sp.k(); ++id)
          batch.append(extract_patch(image, sp, graph, boxes, id, NeighborLevel(level.neighbors), level.side),
                       PatchRecord{i, id, truth[id]});
        per_image[i] = std::move(batch);
      });
      for (Split s : kAllSplits) {
        PatchBatch merged;
        merged.side = level.side;
        for (int id : m.ids_in(s)) {
          merged.data.insert(merged.data.end(), per_image[id].data.begin(), per_image[id].data.end());
          merged.records.insert(merged.records.end(), per_image[id].records.begin(), per_image[id].records.end());
        }
        save_patch_batch(merged, patch_tensor_path(l, s), patch_sidecar_path(l, s));
      }
    };
    ++report.units;
    report.cache_hits += run_unit(u) ? 1 : 0;
    append(report.outputs, u.outputs);
  }
  return report;
}

namespace {

std::string train_fingerprint(const cnn::TrainConfig& t) {
  std::ostringstream s;
  s << "lr=" << format_double(t.learning_rate) << ";epochs=" << t.epochs << ";batch=" << t.batch_size
    << ";seed=" << t.seed << ";momentum=" << format_double(t.momentum)
    << ";activation=" << (t.activation == cnn::Activation::Relu ? "relu" : "tanh")
    << ";inverse_frequency=" << t.inverse_frequency_weights;
  return s.str();
}

struct Accuracies {
  double train = 0.0;
  std::optional<double> val;
};

Accuracies load_accuracies(const fs::path& path) {
  std::istringstream in(read_text_file(path));
  Accuracies a;
  bool have_train = false;
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = line.substr(0, eq), v = line.substr(eq + 1);
    if (key == "train_accuracy") {
      a.train = std::stod(v);
      have_train = true;
    } else if (key == "val_accuracy" && v != "nan") {
      a.val = std::stod(v);
    }
  }
  if (!have_train) throw IoError(path, "missing train_accuracy");
  return a;
}

}  // namespace

StageReport Pipeline::run_train() {
  StageReport report;
  for (std::size_t l = 0; l < config_.levels.size(); ++l) {
    const LevelConfig& level = config_.levels[l];
    Unit u;
    u.key = "train_" + level.name;
    u.inputs = {patch_tensor_path(l, Split::Train), patch_sidecar_path(l, Split::Train),
                patch_tensor_path(l, Split::Val), patch_sidecar_path(l, Split::Val)};
    u.params = config_.level_fingerprint(l) + ";" + train_fingerprint(level.train);
    u.outputs = {model_path(l), confusion_path(l, Split::Train), confusion_path(l, Split::Val), accuracy_path(l)};
    u.build = [&, l] {
      const PatchBatch train = load_patch_batch(patch_tensor_path(l, Split::Train), patch_sidecar_path(l, Split::Train));
      const PatchBatch val = load_patch_batch(patch_tensor_path(l, Split::Val), patch_sidecar_path(l, Split::Val));
      const auto arch = cnn::parse_arch(level.arch, level.side);
      cnn::TrainResult result = cnn::train(train, arch, level.train, &val);
      result.network.save(model_path(l));
      save_confusion_csv(result.confusion, confusion_path(l, Split::Train));
      save_confusion_csv(result.validation_confusion.value_or(ConfusionMatrix(arch.classes())),
                         confusion_path(l, Split::Val));
      write_atomically(accuracy_path(l), [&](std::ostream& out) {
        out << "train_accuracy=" << format_double(result.training_accuracy) << '\n';
        out << "val_accuracy="
            << (result.validation_accuracy ? format_double(*result.validation_accuracy) : std::string("nan")) << '\n';
        for (std::size_t e = 0; e < result.epoch_losses.size(); ++e)
          out << "epoch_loss_" << e + 1 << '=' << format_double(result.epoch_losses[e]) << '\n';
      });
      log_ << "  " << level.name << ": train accuracy " << result.training_accuracy;
      if (result.validation_accuracy) log_ << ", val accuracy " << *result.validation_accuracy;
      log_ << '\n';
    };
    ++report.units;
    report.cache_hits += run_unit(u) ? 1 : 0;
    append(report.outputs, u.outputs);
  }
  return report;
}

StageReport Pipeline::run_predict() {
  StageReport report;
  for (std::size_t l = 0; l < config_.levels.size(); ++l) {
    Unit u;
    u.key = "predict_" + config_.levels[l].name;
    u.inputs = {model_path(l)};
    for (Split s : kEvalSplits) {
      u.inputs.push_back(patch_tensor_path(l, s));
      u.inputs.push_back(patch_sidecar_path(l, s));
      u.outputs.push_back(scores_path(l, s));
    }
    u.build = [&, l] {
      const cnn::Network net = cnn::Network::load(model_path(l));
      for (Split s : kEvalSplits) {
        const PatchBatch batch = load_patch_batch(patch_tensor_path(l, s), patch_sidecar_path(l, s));
        const auto scores = cnn::predict_scores(net, batch);
        std::vector<cnn::ScoreRow> rows(batch.count());
        for (std::size_t i = 0; i < rows.size(); ++i)
          rows[i] = {batch.records[i].image_id, batch.records[i].superpixel_id, scores[i]};
        cnn::save_scores_csv(rows, scores_path(l, s));
      }
    };
    ++report.units;
    report.cache_hits += run_unit(u) ? 1 : 0;
    append(report.outputs, u.outputs);
  }
  return report;
}

StageReport Pipeline::run_fuse(const std::vector<Mode>& modes) {
  if (config_.levels.size() != 3) throw std::invalid_argument("fusion needs exactly three levels");
  const Split evidence = config_.confusion_source == EvidenceSource::Train ? Split::Train : Split::Val;
  StageReport report;
  for (Mode mode : modes) {
    Unit u;
    u.key = "fuse_" + ensemble::mode_name(mode);
    for (std::size_t l = 0; l < 3; ++l) {
      for (Split s : kEvalSplits) u.inputs.push_back(scores_path(l, s));
      u.inputs.push_back(confusion_path(l, evidence));
      u.inputs.push_back(accuracy_path(l));
    }
    std::ostringstream params;
    params << "mode=" << ensemble::mode_name(mode)
           << ";rule=" << (config_.decision_rule == ensemble::DecisionRule::Pignistic ? "pignistic" : "max_singleton")
           << ";confusion=" << split_name(evidence)
           << ";weights=" << (config_.weights_source == EvidenceSource::Train ? "train" : "val");
    if (config_.weights_override)
      params << ";override=" << format_double(config_.weights_override->r1) << ","
             << format_double(config_.weights_override->r2) << "," << format_double(config_.weights_override->r3);
    u.params = params.str();
    for (Split s : kEvalSplits) u.outputs.push_back(decisions_path(mode, s));
    u.outputs.push_back(decisions_path(mode, Split::Test).parent_path() / "weights.txt");
    u.build = [&, mode, evidence] {
      ensemble::FuseInputs in;
      std::array<double, 3> r{};
      for (std::size_t l = 0; l < 3; ++l) {
        in.ratios[l] = ensemble::MissRatios::from_confusion(load_confusion_csv(confusion_path(l, evidence)));
        for (int c : in.ratios[l].unseen)
          log_ << "  note: class " << c << " has no " << split_name(evidence) << " samples at level "
               << config_.levels[l].name << "; its miss ratio is taken as 0\n";
        const Accuracies acc = load_accuracies(accuracy_path(l));
        r[l] = config_.weights_source == EvidenceSource::Validation && acc.val ? *acc.val : acc.train;
      }
      in.weights = config_.weights_override.value_or(ensemble::SourceWeights{r[0], r[1], r[2]});
      ensemble::save_weights(in.weights, decisions_path(mode, Split::Test).parent_path() / "weights.txt");
      for (Split s : kEvalSplits) {
        std::array<std::vector<cnn::ScoreRow>, 3> rows;
        for (std::size_t l = 0; l < 3; ++l) {
          rows[l] = cnn::load_scores_csv(scores_path(l, s));
          in.scores[l] = rows[l];
        }
        const auto decisions = ensemble::fuse(mode, in, {config_.decision_rule});
        const auto fallbacks = std::count_if(decisions.begin(), decisions.end(),
                                             [](const ensemble::Decision& d) { return d.conflict_fallback; });
        if (fallbacks > 0)
          log_ << "  " << split_name(s) << ": " << fallbacks
               << " superpixel(s) in total conflict fell back to the weighted average\n";
        ensemble::save_decisions_csv(decisions, decisions_path(mode, s));
      }
    };
    ++report.units;
    report.cache_hits += run_unit(u) ? 1 : 0;
    append(report.outputs, u.outputs);
  }
  return report;
}

StageReport Pipeline::run_evaluate(const std::vector<Mode>& modes) {
  require(manifest_path());
  const DatasetManifest m = DatasetManifest::load(manifest_path());
  const std::string suffix = modes.size() == 1 ? "_" + ensemble::mode_name(modes.front()) : "";
  Unit u;
  u.key = "evaluate" + suffix;
  u.inputs = {manifest_path()};
  for (Split s : kEvalSplits) {
    for (std::size_t l = 0; l < config_.levels.size(); ++l) u.inputs.push_back(scores_path(l, s));
    for (Mode mode : modes) u.inputs.push_back(decisions_path(mode, s));
    for (int id : m.ids_in(s)) {
      u.inputs.push_back(m.entries[id].label);
      u.inputs.push_back(superpixel_path(id));
    }
    u.outputs.push_back(report_path(s, suffix + ".txt"));
    u.outputs.push_back(report_path(s, suffix + "_pixel.csv"));
    u.outputs.push_back(report_path(s, suffix + "_superpixel.csv"));
  }
  u.build = [&] {
    for (Split s : kEvalSplits) {
      // Per-image superpixel maps and truths.
      std::map<int, std::pair<SuperpixelMap, std::vector<int>>> images;
      for (int id : m.ids_in(s)) {
        SuperpixelMap sp = SuperpixelMap::from_grid(load_int_grid(superpixel_path(id)));
        const LabelMap labels = load_label_map(m.entries[id].label, sp.height(), sp.width());
        auto truth = metrics::superpixel_ground_truth(sp, labels);
        images.emplace(id, std::make_pair(std::move(sp), std::move(truth)));
      }
      // name -> per-image predictions
      std::vector<std::pair<std::string, std::map<int, std::vector<int>>>> sources;
      auto blank = [&] {
        std::map<int, std::vector<int>> p;
        for (const auto& [id, v] : images) p[id].assign(v.first.k(), -1);
        return p;
      };
      auto place = [&](std::map<int, std::vector<int>>& preds, int image_id, int sp_id, int cls,
                       const fs::path& from) {
        auto it = preds.find(image_id);
        if (it == preds.end() || sp_id < 0 || sp_id >= static_cast<int>(it->second.size()))
          throw IoError(from, "row (" + std::to_string(image_id) + "," + std::to_string(sp_id) +
                                  ") does not match any superpixel of this split");
        it->second[sp_id] = cls;
      };
      for (std::size_t l = 0; l < config_.levels.size(); ++l) {
        auto preds = blank();
        for (const auto& row : cnn::load_scores_csv(scores_path(l, s)))
          place(preds, row.image_id, row.superpixel_id, argmax(row.scores), scores_path(l, s));
        sources.emplace_back(config_.levels[l].name, std::move(preds));
      }
      for (Mode mode : modes) {
        auto preds = blank();
        for (const auto& d : ensemble::load_decisions_csv(decisions_path(mode, s)))
          place(preds, d.image_id, d.superpixel_id, d.predicted, decisions_path(mode, s));
        sources.emplace_back(ensemble::mode_name(mode), std::move(preds));
      }

      std::vector<std::pair<std::string, metrics::EvaluationReport>> pixel_rows, sp_rows;
      for (const auto& [name, preds] : sources) {
        metrics::Evaluator by_pixel, by_sp;
        for (const auto& [id, v] : images) {
          const auto& p = preds.at(id);
          for (int k = 0; k < v.first.k(); ++k)
            if (v.second[k] != kVoidLabel && p[k] < 0)
              throw std::invalid_argument(name + ": image " + std::to_string(id) + " superpixel " +
                                          std::to_string(k) + " has no prediction");
          by_pixel.add(p, v.second, metrics::Weighting::Pixel, v.first);
          by_sp.add(p, v.second, metrics::Weighting::Superpixel, v.first);
        }
        pixel_rows.emplace_back(name, by_pixel.report());
        sp_rows.emplace_back(name, by_sp.report());
      }
      const auto& classes = ClassSet::standard();
      write_atomically(report_path(s, suffix + ".txt"), [&](std::ostream& out) {
        out << split_name(s) << " split, " << images.size() << " images\n\n";
        out << "Pixel-weighted accuracy (%)\n" << metrics::format_table(pixel_rows, classes) << '\n';
        out << "Superpixel-weighted accuracy (%)\n" << metrics::format_table(sp_rows, classes);
      });
      metrics::save_report_csv(pixel_rows, classes, report_path(s, suffix + "_pixel.csv"));
      metrics::save_report_csv(sp_rows, classes, report_path(s, suffix + "_superpixel.csv"));
      if (s == Split::Test) log_ << "Test split, pixel-weighted accuracy (%)\n" << metrics::format_table(pixel_rows, classes);
    }
  };
  return StageReport{1, run_unit(u) ? 1 : 0, u.outputs};
}

StageReport Pipeline::run_overlay(const std::vector<Mode>& modes) {
  require(manifest_path());
  const DatasetManifest m = DatasetManifest::load(manifest_path());
  const auto ids = m.ids_in(Split::Test);
  StageReport report;
  for (Mode mode : modes) {
    Unit u;
    u.key = "overlay_" + ensemble::mode_name(mode);
    u.inputs = {decisions_path(mode, Split::Test)};
    const fs::path dir = workspace() / "reports" / "overlays" / ensemble::mode_name(mode);
    for (int id : ids) {
      u.inputs.push_back(m.entries[id].image);
      u.inputs.push_back(superpixel_path(id));
      u.outputs.push_back(dir / (std::to_string(id) + ".png"));
    }
    u.build = [&, mode, dir] {
      std::map<int, std::vector<int>> preds;
      for (const auto& d : ensemble::load_decisions_csv(decisions_path(mode, Split::Test))) {
        auto& v = preds[d.image_id];
        if (static_cast<int>(v.size()) <= d.superpixel_id) v.resize(d.superpixel_id + 1, -1);
        v[d.superpixel_id] = d.predicted;
      }
      parallel_for_each(static_cast<int>(ids.size()), [&](int i) {
        const int id = ids[i];
        const Image image = load_image(m.entries[id].image);
        const SuperpixelMap sp = SuperpixelMap::from_grid(load_int_grid(superpixel_path(id)));
        const auto it = preds.find(id);
        const std::vector<int> none;
        save_overlay(image, sp, it == preds.end() ? none : it->second, ClassSet::standard(),
                     dir / (std::to_string(id) + ".png"));
      });
    };
    ++report.units;
    report.cache_hits += run_unit(u) ? 1 : 0;
    append(report.outputs, u.outputs);
  }
  return report;
}

}  // namespace evidseg
