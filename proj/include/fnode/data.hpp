#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace fnode::data {

// One observed trajectory: values[i] is the observation at times[i].
struct Trajectory {
  std::vector<double> times;
  std::vector<std::vector<double>> values;
  std::optional<int> label;
  std::map<std::string, double> meta;

  std::size_t length() const { return times.size(); }
  std::size_t obs_dim() const { return values.empty() ? 0 : values.front().size(); }
  // Throws std::invalid_argument on empty, unordered, ragged or non-finite data.
  void validate() const;

  friend bool operator==(const Trajectory&, const Trajectory&) = default;
};

struct DatasetMeta {
  std::string generator;
  std::uint64_t seed = 0;
  std::map<std::string, double> params;
  // Per-class generator parameter (amplitude A or frequency B), indexed by label.
  std::vector<double> class_params;

  friend bool operator==(const DatasetMeta&, const DatasetMeta&) = default;
};

struct PanelDataset {
  std::vector<Trajectory> trajectories;
  std::size_t obs_dim = 0;
  DatasetMeta meta;

  std::size_t size() const { return trajectories.size(); }
  void validate() const;

  friend bool operator==(const PanelDataset&, const PanelDataset&) = default;
};

// The prefix of `x` whose times fall within the first `fraction` of its time span.
Trajectory truncate_fraction(const Trajectory& x, double fraction);

}  // namespace fnode::data
