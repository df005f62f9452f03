#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "fnode/data.hpp"

namespace fnode::data {

enum class NoiseMode { PerTrajectory, PerPoint };

struct SynthConfig {
  std::size_t n_per_class = 100;
  std::size_t n_classes = 10;
  std::size_t n_points = 10;
  double t_max = 1.5;
  std::uint64_t seed = 0;
  double noise_var = 1e-3;
  NoiseMode noise = NoiseMode::PerTrajectory;
  // Class parameters (A or B); drawn from Unif(0,10) when absent.
  std::optional<std::vector<double>> class_params;
  // Put t = 0 in every trajectory's time sample.
  bool include_origin = false;

  void validate() const;
};

// x(t) = A*sin(2*pi*t) + eps, one amplitude A per class.
PanelDataset generate_set_a(const SynthConfig& cfg);
// x(t) = sin(2*pi*B*t) + eps, one frequency B per class.
PanelDataset generate_set_b(const SynthConfig& cfg);

// Draws the n_classes class parameters for `seed` exactly as the generators do.
std::vector<double> draw_class_params(std::uint64_t seed, std::size_t n_classes);

// Splits each class: the first `per_class` trajectories of every label go to `second`.
std::pair<PanelDataset, PanelDataset> split_per_class(const PanelDataset& data, std::size_t per_class);

class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& msg, std::size_t line) : std::runtime_error(msg), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

// JSON-lines: a header record, then one record per trajectory.
std::string dataset_to_jsonl(const PanelDataset& data);
PanelDataset dataset_from_jsonl(const std::string& text);
void save_dataset(const PanelDataset& data, const std::filesystem::path& path);
PanelDataset load_dataset(const std::filesystem::path& path);

}  // namespace fnode::data
