#include "evidseg/config.hpp"

#include <algorithm>
#include <charconv>
#include <functional>
#include <sstream>

#include "evidseg/io_util.hpp"

namespace evidseg {

namespace fs = std::filesystem;

RunConfig RunConfig::defaults() {
  RunConfig c;
  c.workspace = "workspace";
  c.levels = {
      {"0N", 0, 24, "32C5-2P-64C3-2P-FC256", {}},
      {"1N", 1, 32, "32C7-2P-64C5-2P-FC256", {}},
      {"2N", 2, 48, "32C7-2P-64C5-2P-FC256", {}},
  };
  c.set_seed(0);
  return c;
}

void RunConfig::set_seed(std::uint64_t s) {
  seed = s;
  for (std::size_t i = 0; i < levels.size(); ++i) levels[i].train.seed = s * 1000003ull + i + 1;
}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  auto [end, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc{} || end != value.data() + value.size())
    throw std::invalid_argument("config key '" + key + "': cannot parse '" + value + "'");
  return out;
}

std::vector<std::string> split_list(const std::string& value) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(value);
  while (std::getline(in, item, ',')) out.push_back(trim(item));
  return out;
}

cnn::Activation parse_activation(const std::string& key, const std::string& v) {
  if (v == "relu") return cnn::Activation::Relu;
  if (v == "tanh") return cnn::Activation::Tanh;
  throw std::invalid_argument("config key '" + key + "': expected relu or tanh");
}

bool parse_class_weighting(const std::string& key, const std::string& v) {
  if (v == "none") return false;
  if (v == "inverse_frequency") return true;
  throw std::invalid_argument("config key '" + key + "': expected none or inverse_frequency");
}

EvidenceSource parse_source(const std::string& key, const std::string& v) {
  if (v == "train") return EvidenceSource::Train;
  if (v == "val") return EvidenceSource::Validation;
  throw std::invalid_argument("config key '" + key + "': expected train or val");
}

// Applies a training key to `t`; returns false if the key is not a training key.
bool apply_train_key(const std::string& key, const std::string& name, const std::string& v,
                     cnn::TrainConfig& t) {
  if (name == "learning_rate") t.learning_rate = parse_number<double>(key, v);
  else if (name == "epochs") t.epochs = parse_number<int>(key, v);
  else if (name == "batch_size") t.batch_size = parse_number<int>(key, v);
  else if (name == "momentum") t.momentum = parse_number<double>(key, v);
  else if (name == "activation") t.activation = parse_activation(key, v);
  else if (name == "class_weighting") t.inverse_frequency_weights = parse_class_weighting(key, v);
  else return false;
  return true;
}

}  // namespace

RunConfig RunConfig::parse(const std::string& text, const fs::path& base_dir) {
  RunConfig c = defaults();
  auto resolve = [&](const std::string& v) {
    fs::path p(v);
    return p.is_absolute() ? p : base_dir / p;
  };

  // Per-level keys are applied after globals so they win regardless of order.
  std::vector<std::pair<std::string, std::string>> level_keys;
  std::optional<std::uint64_t> seed;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key=value");
    const std::string key = trim(std::string_view(line).substr(0, eq));
    const std::string v = trim(std::string_view(line).substr(eq + 1));

    if (key.starts_with("level")) {
      level_keys.emplace_back(key, v);
      continue;
    }
    bool handled = false;
    for (auto& l : c.levels) handled = apply_train_key(key, key, v, l.train) || handled;
    if (handled) continue;

    if (key == "dataset") c.dataset = resolve(v);
    else if (key == "workspace") c.workspace = resolve(v);
    else if (key == "seed") seed = parse_number<std::uint64_t>(key, v);
    else if (key == "split") {
      const auto parts = split_list(v);
      if (parts.size() != 3) throw std::invalid_argument("config key 'split': expected train,val,test");
      c.split_sizes = std::array<int, 3>{parse_number<int>(key, parts[0]), parse_number<int>(key, parts[1]),
                                         parse_number<int>(key, parts[2])};
    } else if (key == "mor") c.slic.mor = parse_number<double>(key, v);
    else if (key == "compactness") c.slic.compactness = parse_number<double>(key, v);
    else if (key == "slic_iterations") c.slic.iterations = parse_number<int>(key, v);
    else if (key == "min_region_fraction") c.slic.min_region_fraction = parse_number<double>(key, v);
    else if (key == "adjacency") {
      if (v == "4") c.adjacency = Connectivity::Four;
      else if (v == "8") c.adjacency = Connectivity::Eight;
      else throw std::invalid_argument("config key 'adjacency': expected 4 or 8");
    } else if (key == "decision_rule") {
      if (v == "pignistic") c.decision_rule = ensemble::DecisionRule::Pignistic;
      else if (v == "max_singleton") c.decision_rule = ensemble::DecisionRule::MaxSingleton;
      else throw std::invalid_argument("config key 'decision_rule': expected pignistic or max_singleton");
    } else if (key == "confusion_source") c.confusion_source = parse_source(key, v);
    else if (key == "weights_source") c.weights_source = parse_source(key, v);
    else if (key == "weights") {
      const auto parts = split_list(v);
      if (parts.size() != 3) throw std::invalid_argument("config key 'weights': expected r1,r2,r3");
      ensemble::SourceWeights w{parse_number<double>(key, parts[0]), parse_number<double>(key, parts[1]),
                                parse_number<double>(key, parts[2])};
      w.validate();
      c.weights_override = w;
    } else {
      throw std::invalid_argument("unknown config key '" + key + "'");
    }
  }

  for (const auto& [key, v] : level_keys) {
    const auto dot = key.find('.');
    if (dot == std::string::npos || dot < 6)
      throw std::invalid_argument("unknown config key '" + key + "'");
    const int idx = parse_number<int>(key, key.substr(5, dot - 5));
    if (idx < 0 || idx >= static_cast<int>(c.levels.size()))
      throw std::invalid_argument("config key '" + key + "': level index out of range");
    LevelConfig& l = c.levels[idx];
    const std::string name = key.substr(dot + 1);
    if (apply_train_key(key, name, v, l.train)) continue;
    if (name == "neighbors") l.neighbors = NeighborLevel(parse_number<int>(key, v)).value();
    else if (name == "side") l.side = parse_number<int>(key, v);
    else if (name == "arch") l.arch = v;
    else throw std::invalid_argument("unknown config key '" + key + "'");
  }

  c.set_seed(seed.value_or(0));
  c.slic.validate();
  for (const auto& l : c.levels) {
    l.train.validate();
    cnn::parse_arch(l.arch, l.side);
  }
  return c;
}

RunConfig RunConfig::load(const fs::path& path) {
  try {
    return parse(read_text_file(path), path.parent_path());
  } catch (const IoError&) {
    throw;
  } catch (const std::exception& e) {
    throw IoError(path, e.what());
  }
}

std::string RunConfig::slic_fingerprint() const {
  std::ostringstream s;
  s << "mor=" << format_double(slic.mor) << ";compactness=" << format_double(slic.compactness)
    << ";iterations=" << slic.iterations << ";min_region_fraction=" << format_double(slic.min_region_fraction);
  return s.str();
}

std::string RunConfig::level_fingerprint(std::size_t i) const {
  const LevelConfig& l = levels.at(i);
  std::ostringstream s;
  s << "name=" << l.name << ";neighbors=" << l.neighbors << ";side=" << l.side << ";arch=" << l.arch
    << ";adjacency=" << (adjacency == Connectivity::Four ? 4 : 8);
  return s.str();
}

}  // namespace evidseg
