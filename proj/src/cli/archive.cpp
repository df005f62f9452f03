#include <sstream>

#include "fnode/cli.hpp"
#include "fnode/json_io.hpp"

namespace fnode::cli {

using nlohmann::json;

namespace {

json spec_json(const nets::MLPSpec& s) {
  return {{"layer_widths", s.layer_widths}, {"final_tanh", s.final_activation == nets::Activation::Tanh}};
}

nets::MLPSpec spec_from(const json& j) {
  nets::MLPSpec s;
  s.layer_widths = j.at("layer_widths").get<std::vector<std::size_t>>();
  s.final_activation = j.at("final_tanh").get<bool>() ? nets::Activation::Tanh : nets::Activation::None;
  s.validate();
  return s;
}

json encoder_json(const nets::Encoder& e) {
  return {{"spec", spec_json(e.spec)}, {"prefix", e.prefix}, {"slots", e.slots}, {"obs_dim", e.obs_dim}};
}

nets::Encoder encoder_from(const json& j) {
  nets::Encoder e;
  e.spec = spec_from(j.at("spec"));
  e.prefix = j.at("prefix").get<std::string>();
  e.slots = j.at("slots").get<std::size_t>();
  e.obs_dim = j.at("obs_dim").get<std::size_t>();
  return e;
}

json elbo_json(const ELBOBreakdown& b) {
  return {{"elbo", b.total}, {"recon", b.recon_loglik}, {"kl_z0", b.kl_z0}, {"kl_gamma", b.kl_gamma},
          {"kl_weight", b.kl_weight}};
}

ELBOBreakdown elbo_from(const json& j) {
  return {j.at("elbo").get<double>(), j.at("recon").get<double>(), j.at("kl_z0").get<double>(),
          j.at("kl_gamma").get<double>(), j.at("kl_weight").get<double>()};
}

json gmm_json(const gmm::GMMModel& g) {
  return {{"cov_type", gmm::cov_type_name(g.cov_type)},
          {"dim", g.dim},
          {"weights", g.weights},
          {"means", g.means.values()},
          {"covariances", g.covariances}};
}

gmm::GMMModel gmm_from(const json& j) {
  gmm::GMMModel g;
  g.cov_type = gmm::parse_cov_type(j.at("cov_type").get<std::string>());
  g.dim = j.at("dim").get<std::size_t>();
  g.weights = j.at("weights").get<std::vector<double>>();
  g.means = tg::Tensor({g.weights.size(), g.dim}, j.at("means").get<std::vector<double>>());
  g.covariances = j.at("covariances").get<std::vector<std::vector<double>>>();
  g.validate();
  return g;
}

void expect_param(const tg::ParamSet& params, const std::string& name, const tg::Shape& shape) {
  if (!params.contains(name)) throw std::runtime_error("model archive lacks parameter " + name);
  if (params.get(name).shape() != shape) {
    throw std::runtime_error("parameter " + name + " has shape " + tg::shape_str(params.get(name).shape()) +
                             ", architecture needs " + tg::shape_str(shape));
  }
}

void expect_mlp(const tg::ParamSet& params, const std::string& prefix, const nets::MLPSpec& spec) {
  for (std::size_t l = 0; l < spec.layers(); ++l) {
    expect_param(params, nets::weight_name(prefix, l), {spec.layer_widths[l + 1], spec.layer_widths[l]});
    expect_param(params, nets::bias_name(prefix, l), {spec.layer_widths[l + 1]});
  }
}

void check_params(const FNODEModel& m) {
  expect_mlp(m.params, m.enc_z0.prefix, m.enc_z0.spec);
  expect_mlp(m.params, m.enc_gamma.prefix, m.enc_gamma.spec);
  expect_mlp(m.params, m.hyper.prefix, m.hyper.body);
  expect_param(m.params, m.hyper.lambda_name(), {1});
  expect_mlp(m.params, m.dec.prefix, m.dec.spec);
  std::size_t expected = 1;
  for (const auto* spec : {&m.enc_z0.spec, &m.enc_gamma.spec, &m.hyper.body, &m.dec.spec}) expected += 2 * spec->layers();
  if (m.params.size() != expected) throw std::runtime_error("model archive holds parameters the architecture does not use");
  if (m.enc_z0.spec.input_width() != m.enc_z0.slots * (m.obs_dim + 2) ||
      m.enc_gamma.spec.input_width() != m.enc_gamma.slots * (m.obs_dim + 2)) {
    throw std::runtime_error("encoder input width disagrees with its slot count");
  }
}

}  // namespace

std::string archive_to_json(const ModelArchive& a) {
  const FNODEModel& m = a.model;
  json params = json::array();
  for (const auto& [name, t] : m.params) params.push_back({{"name", name}, {"shape", t.shape()}, {"values", t.values()}});
  json history = json::array();
  for (const auto& h : a.history) history.push_back(elbo_json(h));
  json config = json::array();
  for (const auto& [k, v] : a.config) config.push_back({k, v});
  json doc = {{"format", "fnode-model"},
              {"format_version", kArchiveVersion},
              {"architecture",
               {{"latent_dim", m.latent_dim},
                {"gamma_dim", m.gamma_dim},
                {"obs_dim", m.obs_dim},
                {"sigma_x", m.sigma_x},
                {"t0", m.t0},
                {"solver", {{"method", "rk4"}, {"step_size", m.solver.step_size}}},
                {"enc_z0", encoder_json(m.enc_z0)},
                {"enc_gamma", encoder_json(m.enc_gamma)},
                {"hyper", {{"body", spec_json(m.hyper.body)}, {"prefix", m.hyper.prefix}}},
                {"field", spec_json(m.f_spec)},
                {"decoder", {{"spec", spec_json(m.dec.spec)}, {"prefix", m.dec.prefix}}}}},
              {"params", params},
              {"gmm", a.gmm ? gmm_json(*a.gmm) : json(nullptr)},
              {"history", history},
              {"seeds",
               {{"seed", a.seeds.seed},
                {"init", a.seeds.init},
                {"train", a.seeds.train},
                {"gmm_bank", a.seeds.gmm_bank},
                {"gmm_select", a.seeds.gmm_select}}},
              {"config", config}};
  return io::dump_exact(doc) + "\n";
}

ModelArchive archive_from_json(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("model archive is not valid JSON: ") + e.what());
  }
  try {
    if (doc.value("format", std::string()) != "fnode-model") throw std::runtime_error("not an fnode model archive");
    const int version = doc.at("format_version").get<int>();
    if (version != kArchiveVersion) {
      throw std::runtime_error("model archive version " + std::to_string(version) + " is not supported (expected " +
                               std::to_string(kArchiveVersion) + ")");
    }
    ModelArchive a;
    FNODEModel& m = a.model;
    const json& arch = doc.at("architecture");
    m.latent_dim = arch.at("latent_dim").get<std::size_t>();
    m.gamma_dim = arch.at("gamma_dim").get<std::size_t>();
    m.obs_dim = arch.at("obs_dim").get<std::size_t>();
    m.sigma_x = arch.at("sigma_x").get<double>();
    m.t0 = arch.at("t0").get<double>();
    if (arch.at("solver").at("method").get<std::string>() != "rk4") throw std::runtime_error("unknown solver method");
    m.solver.step_size = arch.at("solver").at("step_size").get<double>();
    m.enc_z0 = encoder_from(arch.at("enc_z0"));
    m.enc_gamma = encoder_from(arch.at("enc_gamma"));
    m.hyper.body = spec_from(arch.at("hyper").at("body"));
    m.hyper.prefix = arch.at("hyper").at("prefix").get<std::string>();
    m.f_spec = spec_from(arch.at("field"));
    m.dec.spec = spec_from(arch.at("decoder").at("spec"));
    m.dec.prefix = arch.at("decoder").at("prefix").get<std::string>();
    for (const auto& p : doc.at("params")) {
      m.params.add(p.at("name").get<std::string>(),
                   tg::Tensor(p.at("shape").get<tg::Shape>(), p.at("values").get<std::vector<double>>()));
    }
    m.validate();
    check_params(m);
    if (!doc.at("gmm").is_null()) {
      a.gmm = gmm_from(doc.at("gmm"));
      if (a.gmm->dim != m.gamma_dim && a.gmm->dim != m.gamma_dim + m.latent_dim) {
        throw std::runtime_error("archived mixture dimension fits neither gamma nor z0||gamma");
      }
    }
    for (const auto& h : doc.at("history")) a.history.push_back(elbo_from(h));
    const json& s = doc.at("seeds");
    a.seeds = {s.at("seed").get<std::uint64_t>(), s.at("init").get<std::uint64_t>(), s.at("train").get<std::uint64_t>(),
               s.at("gmm_bank").get<std::uint64_t>(), s.at("gmm_select").get<std::uint64_t>()};
    for (const auto& kv : doc.at("config")) a.config.emplace_back(kv.at(0).get<std::string>(), kv.at(1).get<std::string>());
    return a;
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("malformed model archive: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw std::runtime_error(std::string("inconsistent model archive: ") + e.what());
  } catch (const tg::Error& e) {
    throw std::runtime_error(std::string("inconsistent model archive: ") + e.what());
  }
}

void save_archive(const ModelArchive& a, const std::filesystem::path& path) { io::write_atomic(path, archive_to_json(a)); }

ModelArchive load_archive(const std::filesystem::path& path) { return archive_from_json(io::read_file(path)); }

std::string history_csv(const std::vector<ELBOBreakdown>& history) {
  std::ostringstream os;
  os.precision(17);
  os << "epoch,elbo,recon,kl_z0,kl_gamma,kl_weight\n";
  for (std::size_t e = 0; e < history.size(); ++e) {
    const auto& h = history[e];
    os << e << ',' << h.total << ',' << h.recon_loglik << ',' << h.kl_z0 << ',' << h.kl_gamma << ',' << h.kl_weight
       << '\n';
  }
  return os.str();
}

}  // namespace fnode::cli
