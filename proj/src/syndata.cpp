#include "fnode/syndata.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "fnode/json_io.hpp"
#include "fnode/rng.hpp"

namespace fnode::data {

void Trajectory::validate() const {
  if (times.empty()) throw std::invalid_argument("trajectory has no observations");
  if (times.size() != values.size()) throw std::invalid_argument("trajectory times and values differ in length");
  const std::size_t d = values.front().size();
  if (d == 0) throw std::invalid_argument("trajectory observations are empty vectors");
  for (std::size_t i = 0; i < times.size(); ++i) {
    if (!std::isfinite(times[i])) throw std::invalid_argument("trajectory time is not finite");
    if (i > 0 && !(times[i] > times[i - 1])) throw std::invalid_argument("trajectory times not strictly increasing");
    if (values[i].size() != d) throw std::invalid_argument("trajectory observations have mixed widths");
    for (double v : values[i])
      if (!std::isfinite(v)) throw std::invalid_argument("trajectory value is not finite");
  }
}

void PanelDataset::validate() const {
  if (trajectories.empty()) throw std::invalid_argument("dataset is empty");
  for (std::size_t i = 0; i < trajectories.size(); ++i) {
    trajectories[i].validate();
    if (trajectories[i].obs_dim() != obs_dim) {
      throw std::invalid_argument("trajectory " + std::to_string(i) + " has observation width " +
                                  std::to_string(trajectories[i].obs_dim()) + ", dataset declares " +
                                  std::to_string(obs_dim));
    }
  }
}

Trajectory truncate_fraction(const Trajectory& x, double fraction) {
  if (!(fraction > 0.0) || fraction > 1.0) throw std::invalid_argument("fraction must lie in (0,1]");
  const double cut = fraction * (x.times.back() - x.times.front());
  Trajectory out;
  out.label = x.label;
  out.meta = x.meta;
  for (std::size_t i = 0; i < x.length(); ++i) {
    if (i > 0 && x.times[i] - x.times.front() > cut) break;
    out.times.push_back(x.times[i]);
    out.values.push_back(x.values[i]);
  }
  return out;
}

void SynthConfig::validate() const {
  if (n_per_class == 0 || n_classes == 0 || n_points == 0) {
    throw std::invalid_argument("n_per_class, n_classes and n_points must be positive");
  }
  if (!(t_max > 0.0)) throw std::invalid_argument("t_max must be positive");
  if (!(noise_var >= 0.0)) throw std::invalid_argument("noise variance must be >= 0");
  if (class_params && class_params->size() != n_classes) {
    throw std::invalid_argument("class_params must hold n_classes values");
  }
}

std::vector<double> draw_class_params(std::uint64_t seed, std::size_t n_classes) {
  Rng rng = make_rng(seed, 1);
  std::uniform_real_distribution<double> u(0.0, 10.0);
  std::vector<double> out(n_classes);
  for (auto& v : out) v = u(rng);
  return out;
}

namespace {

std::vector<double> sample_times(Rng& rng, const SynthConfig& cfg) {
  std::uniform_real_distribution<double> u(0.0, cfg.t_max);
  for (;;) {
    std::vector<double> t;
    if (cfg.include_origin) t.push_back(0.0);
    while (t.size() < cfg.n_points) t.push_back(u(rng));
    std::sort(t.begin(), t.end());
    if (std::adjacent_find(t.begin(), t.end()) == t.end()) return t;
  }
}

template <class Curve>
PanelDataset generate(const SynthConfig& cfg, const std::string& name, const std::string& param_key, Curve curve) {
  cfg.validate();
  PanelDataset out;
  out.obs_dim = 1;
  out.meta.generator = name;
  out.meta.seed = cfg.seed;
  out.meta.class_params = cfg.class_params ? *cfg.class_params : draw_class_params(cfg.seed, cfg.n_classes);
  out.meta.params = {{"n_per_class", static_cast<double>(cfg.n_per_class)},
                     {"n_classes", static_cast<double>(cfg.n_classes)},
                     {"n_points", static_cast<double>(cfg.n_points)},
                     {"t_max", cfg.t_max},
                     {"noise_var", cfg.noise_var},
                     {"per_point_noise", cfg.noise == NoiseMode::PerPoint ? 1.0 : 0.0}};

  Rng rng = make_rng(cfg.seed, 2);
  std::normal_distribution<double> eps(0.0, std::sqrt(cfg.noise_var));
  for (std::size_t c = 0; c < cfg.n_classes; ++c) {
    const double p = out.meta.class_params[c];
    for (std::size_t j = 0; j < cfg.n_per_class; ++j) {
      Trajectory x;
      x.label = static_cast<int>(c);
      x.meta[param_key] = p;
      x.times = sample_times(rng, cfg);
      const double shared = cfg.noise_var > 0.0 ? eps(rng) : 0.0;
      for (double t : x.times) {
        const double e = cfg.noise == NoiseMode::PerPoint && cfg.noise_var > 0.0 ? eps(rng) : shared;
        x.values.push_back({curve(p, t) + e});
      }
      out.trajectories.push_back(std::move(x));
    }
  }
  return out;
}

}  // namespace

PanelDataset generate_set_a(const SynthConfig& cfg) {
  return generate(cfg, "set_a", "A", [](double a, double t) { return a * std::sin(2.0 * std::numbers::pi * t); });
}

PanelDataset generate_set_b(const SynthConfig& cfg) {
  return generate(cfg, "set_b", "B", [](double b, double t) { return std::sin(2.0 * std::numbers::pi * b * t); });
}

std::pair<PanelDataset, PanelDataset> split_per_class(const PanelDataset& data, std::size_t per_class) {
  PanelDataset keep, held;
  keep.obs_dim = held.obs_dim = data.obs_dim;
  keep.meta = held.meta = data.meta;
  std::map<int, std::size_t> taken;
  for (const auto& x : data.trajectories) {
    const int label = x.label.value_or(-1);
    if (taken[label] < per_class) {
      ++taken[label];
      held.trajectories.push_back(x);
    } else {
      keep.trajectories.push_back(x);
    }
  }
  return {std::move(keep), std::move(held)};
}

std::string dataset_to_jsonl(const PanelDataset& data) {
  using nlohmann::json;
  std::string out;
  json header = {{"header", true},
                 {"format", "fnode-panel"},
                 {"version", 1},
                 {"obs_dim", data.obs_dim},
                 {"generator", data.meta.generator},
                 {"seed", data.meta.seed},
                 {"params", data.meta.params},
                 {"class_params", data.meta.class_params},
                 {"count", data.trajectories.size()}};
  out += io::dump_exact(header);
  out += '\n';
  for (std::size_t i = 0; i < data.trajectories.size(); ++i) {
    const auto& x = data.trajectories[i];
    json rec = {{"id", i},
                {"label", x.label ? json(*x.label) : json(nullptr)},
                {"times", x.times},
                {"values", x.values},
                {"meta", x.meta}};
    out += io::dump_exact(rec);
    out += '\n';
  }
  return out;
}

namespace {

std::map<std::string, double> number_map(const nlohmann::json& j) {
  std::map<std::string, double> out;
  for (auto it = j.begin(); it != j.end(); ++it) out[it.key()] = it.value().get<double>();
  return out;
}

}  // namespace

PanelDataset dataset_from_jsonl(const std::string& text) {
  using nlohmann::json;
  PanelDataset data;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      if (!have_header) {
        if (!j.is_object() || !j.value("header", false)) throw FormatError("first record must be the header", lineno);
        if (j.at("format").get<std::string>() != "fnode-panel" || j.at("version").get<int>() != 1) {
          throw FormatError("unsupported dataset format or version", lineno);
        }
        data.obs_dim = j.at("obs_dim").get<std::size_t>();
        data.meta.generator = j.at("generator").get<std::string>();
        data.meta.seed = j.at("seed").get<std::uint64_t>();
        data.meta.params = number_map(j.at("params"));
        data.meta.class_params = j.at("class_params").get<std::vector<double>>();
        have_header = true;
        continue;
      }
      Trajectory x;
      if (!j.at("label").is_null()) x.label = j.at("label").get<int>();
      x.times = j.at("times").get<std::vector<double>>();
      x.values = j.at("values").get<std::vector<std::vector<double>>>();
      if (j.contains("meta")) x.meta = number_map(j.at("meta"));
      try {
        x.validate();
      } catch (const std::invalid_argument& e) {
        throw FormatError(e.what(), lineno);
      }
      if (x.obs_dim() != data.obs_dim) {
        throw FormatError("record has observation width " + std::to_string(x.obs_dim()) + ", header declares " +
                              std::to_string(data.obs_dim),
                          lineno);
      }
      data.trajectories.push_back(std::move(x));
    } catch (const FormatError&) {
      throw;
    } catch (const std::exception& e) {
      throw FormatError("line " + std::to_string(lineno) + ": " + e.what(), lineno);
    }
  }
  if (!have_header) throw FormatError("dataset file is empty", lineno);
  if (data.trajectories.empty()) throw FormatError("dataset holds no trajectories", lineno);
  return data;
}

void save_dataset(const PanelDataset& data, const std::filesystem::path& path) {
  data.validate();
  io::write_atomic(path, dataset_to_jsonl(data));
}

PanelDataset load_dataset(const std::filesystem::path& path) { return dataset_from_jsonl(io::read_file(path)); }

}  // namespace fnode::data
