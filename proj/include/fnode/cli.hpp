#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "fnode/gmm.hpp"
#include "fnode/model.hpp"
#include "fnode/train.hpp"

namespace fnode::cli {

// Bad flags, bad config values or inputs that fail validation: exit code 2.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Plain-text key=value settings. '#' starts a comment; blank lines are ignored.
struct RunConfig {
  ArchConfig arch;
  std::size_t encoder_slots = 0;  // 0: longest training trajectory
  TrainConfig train;
  std::uint64_t seed = 0;
  std::size_t gmm_k_min = 1;
  std::size_t gmm_k_max = 20;
  std::size_t gmm_k_step = 1;
  std::vector<gmm::CovType> gmm_cov_types{std::begin(gmm::kAllCovTypes), std::end(gmm::kAllCovTypes)};
  std::size_t gmm_n_gamma = 10;
  bool gmm_joint = false;
  gmm::EMOptions em;

  std::vector<std::size_t> gmm_components() const;
  void validate() const;
  // Every key with its current value, in documentation order.
  std::vector<std::pair<std::string, std::string>> entries() const;
};

RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);
std::string config_to_text(const RunConfig& cfg);

struct Seeds {
  std::uint64_t seed = 0;
  std::uint64_t init = 0;
  std::uint64_t train = 0;
  std::uint64_t gmm_bank = 0;
  std::uint64_t gmm_select = 0;

  static Seeds derive(std::uint64_t seed);
  friend bool operator==(const Seeds&, const Seeds&) = default;
};

inline constexpr int kArchiveVersion = 1;

struct ModelArchive {
  FNODEModel model;
  std::optional<gmm::GMMModel> gmm;
  std::vector<ELBOBreakdown> history;
  Seeds seeds;
  std::vector<std::pair<std::string, std::string>> config;
};

std::string archive_to_json(const ModelArchive& a);
ModelArchive archive_from_json(const std::string& text);
void save_archive(const ModelArchive& a, const std::filesystem::path& path);
ModelArchive load_archive(const std::filesystem::path& path);

std::string history_csv(const std::vector<ELBOBreakdown>& history);

struct Series {
  std::size_t id = 0;
  std::vector<double> times;
  std::vector<double> values;
};

struct BandRow {
  double time = 0.0, lower = 0.0, mean = 0.0, upper = 0.0;
};

// Readers for the sample and band CSVs; `dim` picks the value column (1-based).
std::vector<Series> read_trajectory_csv(const std::string& text, std::size_t dim = 1);
std::vector<BandRow> read_band_csv(const std::string& text, std::size_t dim = 1);
std::string render_svg(const std::vector<Series>& series, const std::vector<BandRow>& band, const std::string& title);

// Parses argv and runs one command. Returns the process exit code.
int run(int argc, const char* const* argv);

}  // namespace fnode::cli
