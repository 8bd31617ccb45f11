#include "tipsfuse/model.hpp"

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <exception>
#include <numeric>
#include <ostream>
#include <thread>

#include "tipsfuse/dataset.hpp"
#include "tipsfuse/errors.hpp"

namespace tipsfuse::model {

namespace {

using ad::Tape;
using ad::Tensor;

std::vector<Matrix> snapshot(const ParamList& ps) {
  std::vector<Matrix> out;
  out.reserve(ps.size());
  for (const auto* p : ps) out.push_back(p->value);
  return out;
}

void restore(const ParamList& ps, const std::vector<Matrix>& values) {
  for (std::size_t i = 0; i < ps.size(); ++i) ps[i]->value = values[i];
}

std::vector<std::size_t> shuffled(std::size_t n, nn::Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), rng);
  return idx;
}

bool improves(std::optional<double> candidate, std::optional<double> best, bool first, bool higher_is_better) {
  if (first) return true;
  if (!candidate) return false;
  if (!best) return true;
  return higher_is_better ? *candidate > *best : *candidate < *best;
}

std::vector<double> row_values(const Matrix& m) { return {m.values().begin(), m.values().end()}; }

template <class Get>
std::vector<double> collect_d(std::span<const ModelInput> in, Get get) {
  std::vector<double> out;
  out.reserve(in.size());
  for (const auto& x : in) out.push_back(get(x.outcomes));
  return out;
}

template <class Get>
std::vector<int> collect_i(std::span<const ModelInput> in, Get get) {
  std::vector<int> out;
  out.reserve(in.size());
  for (const auto& x : in) out.push_back(get(x.outcomes));
  return out;
}

std::optional<double> cindex_of(std::span<const ModelInput> in, std::span<const Prediction> preds, bool ohe) {
  std::vector<double> risks;
  for (const auto& p : preds) risks.push_back(ohe ? p.risk_ohe : p.risk_os);
  const auto times = ohe ? collect_d(in, [](const data::Outcomes& o) { return o.t_ohe; })
                         : collect_d(in, [](const data::Outcomes& o) { return o.t_os; });
  const auto cens = ohe ? collect_i(in, [](const data::Outcomes& o) { return o.c_ohe; })
                        : collect_i(in, [](const data::Outcomes& o) { return o.c_os; });
  return metrics::concordance_index(risks, times, cens);
}

Matrix cached_representation(const fusion::Backbone& bb, const ModelInput& in) {
  Tape tape;
  return bb.forward(tape, in, {}).h_final.value();
}

std::vector<Matrix> cache_all(const fusion::Backbone& bb, std::span<const ModelInput> inputs) {
  std::vector<Matrix> out(inputs.size());
  for (std::size_t i = 0; i < inputs.size(); ++i) out[i] = cached_representation(bb, inputs[i]);
  return out;
}

}  // namespace

Model::Model(ModelConfig c, std::uint64_t seed) : cfg(std::move(c)), backbone(cfg.backbone, seed) {
  const std::size_t in = backbone.output_dim();
  if (cfg.n_bins < 2) throw ConfigError("model: need at least 2 time bins");
  if (cfg.hidden1 == 0 || cfg.hidden2 == 0 || cfg.pressure_hidden == 0) throw ConfigError("model: zero hidden width");
  if (backbone.n_clinical() <= data::kPressureGroup) throw ConfigError("model: pressure clinical group missing");
  survival = heads::HazardHead("survival", in, cfg.hidden1, cfg.hidden2, cfg.n_bins);
  ohe = heads::HazardHead("ohe", in, cfg.hidden1, cfg.hidden2, cfg.n_bins);
  ppg = heads::PpgHead("ppg", in, cfg.hidden1, cfg.hidden2, cfg.backbone.clinical_sizes[data::kPressureGroup],
                       cfg.pressure_hidden, cfg.ppg_scale);
  nn::Rng rng(seed + 1);
  survival.init(rng);
  ohe.init(rng);
  ppg.init(rng);
}

ParamList Model::survival_params() {
  ParamList out = backbone.params();
  survival.collect(out);
  return out;
}

ParamList Model::all_params() {
  ParamList out = survival_params();
  ohe.collect(out);
  ppg.collect(out);
  return out;
}

std::vector<const ad::Parameter*> Model::all_params() const {
  const ParamList ps = const_cast<Model*>(this)->all_params();
  return {ps.begin(), ps.end()};
}

const Matrix& pressure_values(const ModelInput& in) {
  if (in.clinical.size() <= data::kPressureGroup) throw ShapeError("model input: pressure clinical group missing");
  return in.clinical[data::kPressureGroup];
}

Prediction predict(const Model& m, const ModelInput& in) {
  Tape tape;
  const nn::Binder b(tape, false);
  const Tensor h = m.backbone.forward(tape, in, {}).h_final;
  Prediction p;
  p.hazards_os = row_values(m.survival.forward(b, h).value());
  p.hazards_ohe = row_values(m.ohe.forward(b, h).value());
  p.risk_os = heads::risk_score(p.hazards_os);
  p.risk_ohe = heads::risk_score(p.hazards_ohe);
  p.delta_ppg = m.ppg.forward(b, h, tape.constant(pressure_values(in))).item();
  p.ppg_post = in.outcomes.ppg_pre + p.delta_ppg;
  return p;
}

std::size_t worker_threads() {
  if (const char* env = std::getenv("TIPSFUSE_THREADS")) {
    std::size_t n = 0;
    const auto [ptr, ec] = std::from_chars(env, env + std::char_traits<char>::length(env), n);
    if (ec == std::errc() && *ptr == '\0' && n > 0) return n;
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

std::vector<Prediction> predict_all(const Model& m, std::span<const ModelInput> inputs, std::size_t threads) {
  std::vector<Prediction> out(inputs.size());
  const std::size_t workers = std::min(threads == 0 ? worker_threads() : threads, std::max<std::size_t>(inputs.size(), 1));
  if (workers <= 1) {
    for (std::size_t i = 0; i < inputs.size(); ++i) out[i] = predict(m, inputs[i]);
    return out;
  }
  std::vector<std::exception_ptr> errors(workers);
  {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (std::size_t i = w; i < inputs.size(); i += workers) out[i] = predict(m, inputs[i]);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

std::vector<LogRow> staged_train(Model& m, std::span<const ModelInput> train, std::span<const ModelInput> val,
                                 const TrainConfig& cfg, const Progress& progress) {
  if (train.empty()) throw DataError("train: empty training split");
  if (val.empty()) throw DataError("train: empty validation split");
  if (cfg.e0 < 1 || cfg.e1 < 1 || cfg.e2 < 1) throw ConfigError("train: every stage needs at least one epoch");
  if (cfg.delta < 0.0) throw ConfigError("train: delta must be non-negative");

  m.os_bins = heads::make_time_bins(collect_d(train, [](const data::Outcomes& o) { return o.t_os; }),
                                    collect_i(train, [](const data::Outcomes& o) { return o.c_os; }), m.cfg.n_bins);
  m.ohe_bins = heads::make_time_bins(collect_d(train, [](const data::Outcomes& o) { return o.t_ohe; }),
                                     collect_i(train, [](const data::Outcomes& o) { return o.c_ohe; }), m.cfg.n_bins);

  std::vector<LogRow> log;
  long epoch = 0;
  auto record = [&](std::string stage, double loss, std::string metric, std::optional<double> value) {
    log.push_back({++epoch, std::move(stage), loss, std::move(metric), value});
    if (progress) progress(log.back());
  };
  nn::Rng order_rng(cfg.seed);
  nn::Rng dropout_rng(cfg.seed + 0x9e3779b97f4a7c15ULL);
  const double n_train = static_cast<double>(train.size());

  // Stage I: backbone and survival head.
  m.pod = fusion::PodState{};
  m.pod.t_max = cfg.e0 * static_cast<long>(train.size());
  {
    const ParamList params = m.survival_params();
    ad::Adam opt(params, cfg.adam);
    std::vector<Matrix> best;
    std::optional<double> best_metric;
    for (long e = 0; e < cfg.e0; ++e) {
      double total = 0.0;
      for (std::size_t i : shuffled(train.size(), order_rng)) {
        const ModelInput& x = train[i];
        Tape tape;
        const auto r = m.backbone.forward(tape, x, {.trainable = true, .dropout_rng = &dropout_rng, .pod = &m.pod});
        const Tensor z = m.survival.forward(nn::Binder(tape, true), r.h_final);
        const Tensor loss = ad::add(heads::nll_loss(z, m.os_bins.bin(x.outcomes.t_os), x.outcomes.c_os),
                                    ad::scale(r.ortho, cfg.delta));
        total += loss.item();
        tape.backward(loss);
        opt.step(tape.parameter_grads(params));
      }
      const auto c = cindex_of(val, predict_all(m, val), false);
      if (improves(c, best_metric, e == 0, true)) {
        best = snapshot(params);
        best_metric = c;
      }
      record("I", total / n_train, "val_cindex_os", c);
    }
    restore(params, best);
  }

  // Stage II: the backbone is frozen, so its outputs are computed once.
  const std::vector<Matrix> h_train = cache_all(m.backbone, train);
  const std::vector<Matrix> h_val = cache_all(m.backbone, val);

  {  // II-a: PPG head.
    nn::Rng init_rng(cfg.seed + 2);
    m.ppg.init(init_rng);
    ParamList params;
    m.ppg.collect(params);
    ad::Adam opt(params, cfg.adam);
    std::vector<Matrix> best;
    std::optional<double> best_metric;
    for (long e = 0; e < cfg.e1; ++e) {
      double total = 0.0;
      for (std::size_t i : shuffled(train.size(), order_rng)) {
        Tape tape;
        const Tensor d = m.ppg.forward(nn::Binder(tape, true), tape.constant(h_train[i]),
                                       tape.constant(pressure_values(train[i])));
        const Tensor loss = heads::ppg_loss(d, train[i].outcomes.ppg_pre, train[i].outcomes.ppg_post);
        total += loss.item();
        tape.backward(loss);
        opt.step(tape.parameter_grads(params));
      }
      std::vector<double> pred, truth;
      for (std::size_t i = 0; i < val.size(); ++i) {
        Tape tape;
        const double d = m.ppg.forward(nn::Binder(tape, false), tape.constant(h_val[i]),
                                       tape.constant(pressure_values(val[i])))
                             .item();
        pred.push_back(val[i].outcomes.ppg_pre + d);
        truth.push_back(val[i].outcomes.ppg_post);
      }
      const double mae = metrics::mae_rmse(pred, truth).mae;
      if (improves(mae, best_metric, e == 0, false)) {
        best = snapshot(params);
        best_metric = mae;
      }
      record("II-a", total / n_train, "val_mae_ppg", mae);
    }
    restore(params, best);
  }

  {  // II-b: OHE head.
    nn::Rng init_rng(cfg.seed + 3);
    m.ohe.init(init_rng);
    ParamList params;
    m.ohe.collect(params);
    ad::Adam opt(params, cfg.adam);
    std::vector<Matrix> best;
    std::optional<double> best_metric;
    for (long e = 0; e < cfg.e2; ++e) {
      double total = 0.0;
      for (std::size_t i : shuffled(train.size(), order_rng)) {
        const auto& o = train[i].outcomes;
        Tape tape;
        const Tensor z = m.ohe.forward(nn::Binder(tape, true), tape.constant(h_train[i]));
        const Tensor loss = heads::nll_loss(z, m.ohe_bins.bin(o.t_ohe), o.c_ohe);
        total += loss.item();
        tape.backward(loss);
        opt.step(tape.parameter_grads(params));
      }
      std::vector<Prediction> preds(val.size());
      for (std::size_t i = 0; i < val.size(); ++i) {
        Tape tape;
        preds[i].risk_ohe = heads::risk_score(row_values(m.ohe.forward(nn::Binder(tape, false), tape.constant(h_val[i])).value()));
      }
      const auto c = cindex_of(val, preds, true);
      if (improves(c, best_metric, e == 0, true)) {
        best = snapshot(params);
        best_metric = c;
      }
      record("II-b", total / n_train, "val_cindex_ohe", c);
    }
    restore(params, best);
  }
  return log;
}

void write_run_log(std::ostream& out, std::span<const LogRow> rows) {
  out << "epoch,stage,loss,metric_name,metric_value\n";
  for (const auto& r : rows) {
    out << r.epoch << ',' << r.stage << ',' << data::format_double(r.loss) << ',' << r.metric_name << ','
        << (r.metric_value ? data::format_double(*r.metric_value) : std::string("NA")) << '\n';
  }
}

Matrix survival_matrix(std::span<const Prediction> preds, bool ohe) {
  if (preds.empty()) return {};
  const std::size_t n = (ohe ? preds[0].hazards_ohe : preds[0].hazards_os).size();
  Matrix s(preds.size(), n);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const auto curve = heads::survival_curve(ohe ? preds[i].hazards_ohe : preds[i].hazards_os);
    for (std::size_t j = 0; j < n; ++j) s(i, j) = curve[j];
  }
  return s;
}

EvalReport evaluate(const Model& m, std::span<const ModelInput> inputs, std::span<const Prediction> preds) {
  if (inputs.size() != preds.size()) throw ShapeError("evaluate: predictions and inputs differ in count");
  if (inputs.empty()) throw DataError("evaluate: empty split");
  EvalReport r;
  r.patients = inputs.size();
  // Constant risks carry no ranking, so the index is reported as undefined.
  const auto ranked = [&](bool ohe) {
    const auto risk = [ohe](const Prediction& p) { return ohe ? p.risk_ohe : p.risk_os; };
    return std::any_of(preds.begin(), preds.end(), [&](const Prediction& p) { return risk(p) != risk(preds.front()); });
  };
  if (ranked(false)) r.cindex_os = cindex_of(inputs, preds, false);
  if (ranked(true)) r.cindex_ohe = cindex_of(inputs, preds, true);
  std::vector<int> labels, cens;
  for (const auto& x : inputs) {
    labels.push_back(m.os_bins.bin(x.outcomes.t_os));
    cens.push_back(x.outcomes.c_os);
  }
  r.mbs_os = metrics::mean_brier(survival_matrix(preds, false), labels, cens).mbs;
  labels.clear();
  cens.clear();
  for (const auto& x : inputs) {
    labels.push_back(m.ohe_bins.bin(x.outcomes.t_ohe));
    cens.push_back(x.outcomes.c_ohe);
  }
  r.mbs_ohe = metrics::mean_brier(survival_matrix(preds, true), labels, cens).mbs;
  std::vector<double> pred, truth;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    pred.push_back(preds[i].ppg_post);
    truth.push_back(inputs[i].outcomes.ppg_post);
  }
  r.ppg = metrics::mae_rmse(pred, truth);
  return r;
}

const std::vector<ModelInput>& PreparedData::split(data::Split s) const {
  switch (s) {
    case data::Split::train: return train;
    case data::Split::val: return val;
    case data::Split::test: return test;
  }
  throw std::invalid_argument("unknown split");
}

PreparedData prepare(const data::PatientDataset& ds) {
  return prepare(ds, data::FeatureNormalizer::fit(ds, data::Split::train));
}

PreparedData prepare(const data::PatientDataset& ds, data::FeatureNormalizer normalizer) {
  PreparedData out;
  out.normalizer = std::move(normalizer);
  out.groups = data::build_group_index(ds.radiomics_names);
  for (const auto& p : ds.patients) {
    ModelInput in = data::make_model_input(out.normalizer.apply(p), out.groups);
    switch (p.split) {
      case data::Split::train: out.train.push_back(std::move(in)); break;
      case data::Split::val: out.val.push_back(std::move(in)); break;
      case data::Split::test: out.test.push_back(std::move(in)); break;
    }
  }
  return out;
}

void fit_input_sizes(ModelConfig& cfg, const PreparedData& data) {
  auto& b = cfg.backbone;
  b.radiomics_sizes = data.groups.group_sizes();
  b.clinical_sizes.clear();
  for (std::size_t g = 0; g < data::kClinicalGroupCount; ++g) b.clinical_sizes.push_back(data.normalizer.encoded_width(g));
  const std::vector<ModelInput>* any = !data.train.empty() ? &data.train : !data.val.empty() ? &data.val : &data.test;
  if (any->empty()) throw DataError("prepare: dataset has no patients");
  b.deep_dim = any->front().deep.cols();
}

}  // namespace tipsfuse::model
