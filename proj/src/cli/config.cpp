#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <functional>
#include <set>
#include <sstream>

#include "fnode/cli.hpp"
#include "fnode/json_io.hpp"

namespace fnode::cli {

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

std::size_t parse_size(const std::string& key, const std::string& v) {
  std::size_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) throw UsageError(key + ": expected a non-negative integer, got '" + v + "'");
  return out;
}

int parse_int(const std::string& key, const std::string& v) {
  int out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) throw UsageError(key + ": expected an integer, got '" + v + "'");
  return out;
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) throw UsageError(key + ": expected a non-negative integer, got '" + v + "'");
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || !std::isfinite(out)) {
    throw UsageError(key + ": expected a finite number, got '" + v + "'");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw UsageError(key + ": expected true or false, got '" + v + "'");
}

std::string fmt(double v) { return io::format_double(v); }

struct Key {
  const char* name;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define FNODE_SIZE_KEY(NAME, FIELD)                                                             \
  Key {                                                                                         \
    NAME, [](RunConfig& c, const std::string& v) { c.FIELD = parse_size(NAME, v); },            \
        [](const RunConfig& c) { return std::to_string(c.FIELD); }                              \
  }
#define FNODE_INT_KEY(NAME, FIELD)                                                              \
  Key {                                                                                         \
    NAME, [](RunConfig& c, const std::string& v) { c.FIELD = parse_int(NAME, v); },             \
        [](const RunConfig& c) { return std::to_string(c.FIELD); }                              \
  }
#define FNODE_DOUBLE_KEY(NAME, FIELD)                                                           \
  Key {                                                                                         \
    NAME, [](RunConfig& c, const std::string& v) { c.FIELD = parse_double(NAME, v); },          \
        [](const RunConfig& c) { return fmt(c.FIELD); }                                         \
  }

const std::vector<Key>& keys() {
  static const std::vector<Key> table = {
      FNODE_SIZE_KEY("latent_dim", arch.latent_dim),
      FNODE_SIZE_KEY("gamma_dim", arch.gamma_dim),
      FNODE_SIZE_KEY("f_hidden", arch.f_hidden),
      FNODE_SIZE_KEY("f_hidden_layers", arch.f_hidden_layers),
      FNODE_SIZE_KEY("hyper_hidden", arch.hyper_hidden),
      FNODE_SIZE_KEY("hyper_hidden_layers", arch.hyper_hidden_layers),
      FNODE_SIZE_KEY("enc_hidden", arch.enc_hidden),
      FNODE_SIZE_KEY("dec_hidden", arch.dec_hidden),
      FNODE_SIZE_KEY("encoder_slots", encoder_slots),
      FNODE_DOUBLE_KEY("lambda_init", arch.lambda_init),
      FNODE_DOUBLE_KEY("sigma_x", arch.sigma_x),
      FNODE_DOUBLE_KEY("t0", arch.t0),
      FNODE_DOUBLE_KEY("step_size", arch.solver.step_size),
      FNODE_INT_KEY("epochs", train.epochs),
      FNODE_INT_KEY("batch_size", train.batch_size),
      FNODE_DOUBLE_KEY("learning_rate", train.learning_rate),
      FNODE_INT_KEY("kl_anneal_epochs", train.kl_anneal_epochs),
      FNODE_INT_KEY("mc_samples", train.mc_samples),
      Key{"seed", [](RunConfig& c, const std::string& v) { c.seed = parse_u64("seed", v); },
          [](const RunConfig& c) { return std::to_string(c.seed); }},
      FNODE_SIZE_KEY("gmm_k_min", gmm_k_min),
      FNODE_SIZE_KEY("gmm_k_max", gmm_k_max),
      FNODE_SIZE_KEY("gmm_k_step", gmm_k_step),
      Key{"gmm_cov_types",
          [](RunConfig& c, const std::string& v) {
            c.gmm_cov_types.clear();
            std::istringstream in(v);
            std::string item;
            while (std::getline(in, item, ',')) {
              try {
                c.gmm_cov_types.push_back(gmm::parse_cov_type(trim(item)));
              } catch (const std::exception& e) {
                throw UsageError(std::string("gmm_cov_types: ") + e.what());
              }
            }
          },
          [](const RunConfig& c) {
            std::string out;
            for (auto t : c.gmm_cov_types) out += (out.empty() ? "" : ",") + gmm::cov_type_name(t);
            return out;
          }},
      FNODE_SIZE_KEY("gmm_n_gamma", gmm_n_gamma),
      Key{"gmm_joint", [](RunConfig& c, const std::string& v) { c.gmm_joint = parse_bool("gmm_joint", v); },
          [](const RunConfig& c) { return std::string(c.gmm_joint ? "true" : "false"); }},
      FNODE_SIZE_KEY("gmm_max_iter", em.max_iter),
      FNODE_DOUBLE_KEY("gmm_tol", em.tol),
      FNODE_SIZE_KEY("gmm_restarts", em.restarts),
  };
  return table;
}

#undef FNODE_SIZE_KEY
#undef FNODE_INT_KEY
#undef FNODE_DOUBLE_KEY

}  // namespace

std::vector<std::size_t> RunConfig::gmm_components() const {
  std::vector<std::size_t> out;
  for (std::size_t k = gmm_k_min; k <= gmm_k_max; k += gmm_k_step) out.push_back(k);
  return out;
}

void RunConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw UsageError(std::string(name) + " must be >= 1");
  };
  positive(arch.latent_dim, "latent_dim");
  positive(arch.gamma_dim, "gamma_dim");
  positive(arch.f_hidden, "f_hidden");
  positive(arch.hyper_hidden, "hyper_hidden");
  positive(arch.enc_hidden, "enc_hidden");
  positive(arch.dec_hidden, "dec_hidden");
  if (!(arch.lambda_init > 0.0)) throw UsageError("lambda_init must be > 0");
  if (!(arch.sigma_x > 0.0)) throw UsageError("sigma_x must be > 0");
  if (!(arch.solver.step_size > 0.0)) throw UsageError("step_size must be > 0");
  try {
    train.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  positive(gmm_k_min, "gmm_k_min");
  positive(gmm_k_step, "gmm_k_step");
  if (gmm_k_max < gmm_k_min) throw UsageError("gmm_k_max must be >= gmm_k_min");
  if (gmm_cov_types.empty()) throw UsageError("gmm_cov_types must name at least one covariance type");
  if (std::set<gmm::CovType>(gmm_cov_types.begin(), gmm_cov_types.end()).size() != gmm_cov_types.size()) {
    throw UsageError("gmm_cov_types lists a type twice");
  }
  positive(gmm_n_gamma, "gmm_n_gamma");
  positive(em.max_iter, "gmm_max_iter");
  positive(em.restarts, "gmm_restarts");
  if (!(em.tol > 0.0)) throw UsageError("gmm_tol must be > 0");
}

std::vector<std::pair<std::string, std::string>> RunConfig::entries() const {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& k : keys()) out.emplace_back(k.name, k.get(*this));
  return out;
}

RunConfig parse_config(const std::string& text) {
  RunConfig cfg;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = "config line " + std::to_string(lineno) + ": ";
    if (eq == std::string::npos) throw UsageError(where + "expected key=value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const auto& table = keys();
    const auto it = std::find_if(table.begin(), table.end(), [&](const Key& k) { return key == k.name; });
    if (it == table.end()) throw UsageError(where + "unknown key '" + key + "'");
    if (!seen.insert(key).second) throw UsageError(where + "duplicate key '" + key + "'");
    try {
      it->set(cfg, value);
    } catch (const UsageError& e) {
      throw UsageError(where + e.what());
    }
  }
  cfg.validate();
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) { return parse_config(io::read_file(path)); }

std::string config_to_text(const RunConfig& cfg) {
  std::string out;
  for (const auto& [k, v] : cfg.entries()) out += k + "=" + v + "\n";
  return out;
}

Seeds Seeds::derive(std::uint64_t seed) {
  return {seed, mix_seed(seed, 0), mix_seed(seed, 1), mix_seed(seed, 2), mix_seed(seed, 3)};
}

}  // namespace fnode::cli
