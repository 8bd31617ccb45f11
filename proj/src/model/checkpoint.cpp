#include "tipsfuse/checkpoint.hpp"

#include <fstream>
#include <map>

#include <json.hpp>

#include "tipsfuse/errors.hpp"

namespace tipsfuse::model {

namespace {

using nlohmann::json;

constexpr int kFormatVersion = 1;

json matrix_json(const Matrix& m) {
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::vector<double>(m.values().begin(), m.values().end())}};
}

Matrix matrix_from(const json& j) {
  Matrix m(j.at("rows").get<std::size_t>(), j.at("cols").get<std::size_t>());
  const auto data = j.at("data").get<std::vector<double>>();
  if (data.size() != m.size()) throw DataError("checkpoint: matrix data length does not match its shape");
  std::copy(data.begin(), data.end(), m.values().begin());
  return m;
}

json config_json(const ModelConfig& c) {
  const auto& b = c.backbone;
  return {{"d", b.d},
          {"n_c", b.n_c},
          {"deep_dim", b.deep_dim},
          {"radiomics_sizes", b.radiomics_sizes},
          {"clinical_sizes", b.clinical_sizes},
          {"heads", b.heads},
          {"ffn_mult", b.ffn_mult},
          {"dropout", b.dropout},
          {"ot_epsilon", b.ot.epsilon},
          {"ot_max_iters", b.ot.max_iters},
          {"ot_tol", b.ot.tol},
          {"hidden1", c.hidden1},
          {"hidden2", c.hidden2},
          {"pressure_hidden", c.pressure_hidden},
          {"n_bins", c.n_bins},
          {"ppg_scale", c.ppg_scale}};
}

ModelConfig config_from(const json& j) {
  ModelConfig c;
  auto& b = c.backbone;
  b.d = j.at("d");
  b.n_c = j.at("n_c");
  b.deep_dim = j.at("deep_dim");
  b.radiomics_sizes = j.at("radiomics_sizes").get<std::vector<std::size_t>>();
  b.clinical_sizes = j.at("clinical_sizes").get<std::vector<std::size_t>>();
  b.heads = j.at("heads");
  b.ffn_mult = j.at("ffn_mult");
  b.dropout = j.at("dropout");
  b.ot.epsilon = j.at("ot_epsilon");
  b.ot.max_iters = j.at("ot_max_iters");
  b.ot.tol = j.at("ot_tol");
  c.hidden1 = j.at("hidden1");
  c.hidden2 = j.at("hidden2");
  c.pressure_hidden = j.at("pressure_hidden");
  c.n_bins = j.at("n_bins");
  c.ppg_scale = j.at("ppg_scale");
  return c;
}

json normalizer_json(const data::FeatureNormalizer& n) {
  json groups = json::array();
  for (const auto& cols : n.clinical_columns()) {
    json g = json::array();
    for (const auto& c : cols) {
      g.push_back({{"name", c.name},
                   {"kind", std::string(data::to_string(c.kind))},
                   {"min", c.min},
                   {"max", c.max},
                   {"levels", c.levels}});
    }
    groups.push_back(std::move(g));
  }
  return {{"radiomics_min", n.radiomics_min()}, {"radiomics_max", n.radiomics_max()}, {"clinical", groups}};
}

data::FeatureNormalizer normalizer_from(const json& j) {
  std::array<std::vector<data::FeatureNormalizer::Column>, data::kClinicalGroupCount> cols;
  const auto& groups = j.at("clinical");
  if (groups.size() != cols.size()) throw DataError("checkpoint: normalizer has the wrong clinical group count");
  for (std::size_t g = 0; g < cols.size(); ++g) {
    for (const auto& c : groups[g]) {
      cols[g].push_back({c.at("name").get<std::string>(), data::parse_kind(c.at("kind").get<std::string>()),
                         c.at("min").get<double>(), c.at("max").get<double>(),
                         c.at("levels").get<std::vector<double>>()});
    }
  }
  return data::FeatureNormalizer::from_parts(j.at("radiomics_min").get<std::vector<double>>(),
                                             j.at("radiomics_max").get<std::vector<double>>(), std::move(cols));
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const Model& m = ckpt.model;
  json params = json::object();
  for (const auto* p : m.all_params()) params[p->name] = matrix_json(p->value);
  const auto& pod = m.pod;
  json j = {{"format", "tipsfuse-checkpoint"},
            {"version", kFormatVersion},
            {"seed", ckpt.seed},
            {"group_hash", ckpt.group_hash},
            {"config", config_json(m.cfg)},
            {"os_bins", m.os_bins.cuts},
            {"ohe_bins", m.ohe_bins.cuts},
            {"pod",
             {{"initialised", pod.initialised},
              {"max0", pod.max0},
              {"mean0", pod.mean0},
              {"sigma0", pod.sigma0},
              {"ema_max", pod.ema_max},
              {"beta", pod.beta},
              {"alpha", pod.alpha},
              {"t", pod.t},
              {"t_max", pod.t_max}}},
            {"normalizer", normalizer_json(ckpt.normalizer)},
            {"params", params}};
  std::ofstream out(path);
  if (!out) throw DataError("checkpoint: cannot write " + path.string());
  out << j.dump(1) << '\n';
  if (!out) throw DataError("checkpoint: write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("checkpoint: cannot open " + path.string());
  try {
    const json j = json::parse(in);
    if (j.at("format") != "tipsfuse-checkpoint" || j.at("version") != kFormatVersion)
      throw DataError("checkpoint: unsupported format in " + path.string());
    Checkpoint c;
    c.seed = j.at("seed");
    c.group_hash = j.at("group_hash");
    c.model = Model(config_from(j.at("config")), c.seed);
    c.model.os_bins.cuts = j.at("os_bins").get<std::vector<double>>();
    c.model.ohe_bins.cuts = j.at("ohe_bins").get<std::vector<double>>();
    const auto& pod = j.at("pod");
    auto& s = c.model.pod;
    s.initialised = pod.at("initialised");
    s.max0 = pod.at("max0");
    s.mean0 = pod.at("mean0");
    s.sigma0 = pod.at("sigma0");
    s.ema_max = pod.at("ema_max");
    s.beta = pod.at("beta");
    s.alpha = pod.at("alpha");
    s.t = pod.at("t");
    s.t_max = pod.at("t_max");
    c.normalizer = normalizer_from(j.at("normalizer"));
    const auto& params = j.at("params");
    for (ad::Parameter* p : c.model.all_params()) {
      if (!params.contains(p->name)) throw DataError("checkpoint: missing parameter " + p->name);
      Matrix v = matrix_from(params.at(p->name));
      if (!v.same_shape(p->value)) {
        throw DataError("checkpoint: parameter " + p->name + " is " + v.shape_string() + ", expected " +
                        p->value.shape_string());
      }
      p->value = std::move(v);
    }
    if (params.size() != c.model.all_params().size()) throw DataError("checkpoint: unexpected extra parameters");
    return c;
  } catch (const json::exception& e) {
    throw DataError("checkpoint: malformed " + path.string() + ": " + e.what());
  } catch (const ConfigError& e) {
    throw DataError(std::string("checkpoint: invalid model configuration: ") + e.what());
  }
}

}  // namespace tipsfuse::model
