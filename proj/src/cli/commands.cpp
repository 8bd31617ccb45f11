#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <optional>
#include <ostream>
#include <sstream>

#include "tipsfuse/checkpoint.hpp"
#include "tipsfuse/cli.hpp"
#include "tipsfuse/errors.hpp"
#include "tipsfuse/interpret.hpp"
#include "tipsfuse/metrics.hpp"
#include "tipsfuse/model.hpp"
#include "tipsfuse/radiomics.hpp"
#include "tipsfuse/synthetic.hpp"

namespace tipsfuse::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct Context {
  RunConfig cfg;
  fs::path out_dir;
  bool out_given = false;
  bool force = false;
  std::ostream& out;
  std::ostream& err;
};

std::string fmt(double v, const char* spec = "%.4f") {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

std::string na_or(const std::optional<double>& v) { return v ? data::format_double(*v) : "NA"; }

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw DataError("cannot write " + p.string());
  f << text;
  if (!f) throw DataError("failed writing " + p.string());
}

void ensure_dir(const fs::path& dir) {
  if (dir.empty()) throw ConfigError("no output directory (set out_dir or pass --out)");
  if (fs::exists(dir) && !fs::is_directory(dir)) throw ConfigError(dir.string() + " exists and is not a directory");
  fs::create_directories(dir);
}

data::Split split_of(const RunConfig& cfg) { return data::parse_split(cfg.text("split")); }

data::PatientDataset load_data(const RunConfig& cfg) {
  const fs::path dir = cfg.path("data_dir");
  if (dir.empty()) throw ConfigError("config key 'data_dir' is required for this command");
  auto ds = data::load_dataset(data::DatasetPaths::in(dir));
  // Same derivation as the synthetic generator, so splits agree with it.
  data::assign_splits(ds, cfg.count("seed") + 1, cfg.number("train_frac"), cfg.number("val_frac"));
  return ds;
}

model::ModelConfig model_config(const RunConfig& c) {
  model::ModelConfig m;
  m.backbone.d = c.count("d");
  m.backbone.n_c = c.count("n_c");
  m.backbone.heads = c.count("heads");
  m.backbone.ffn_mult = c.count("ffn_mult");
  m.backbone.dropout = c.number("dropout");
  m.backbone.ot.epsilon = c.number("ot.epsilon");
  m.backbone.ot.max_iters = static_cast<int>(c.count("ot.max_iters"));
  m.backbone.ot.tol = c.number("ot.tol");
  m.hidden1 = c.count("hidden1");
  m.hidden2 = c.count("hidden2");
  m.pressure_hidden = c.count("pressure_hidden");
  m.n_bins = c.count("bins");
  m.ppg_scale = c.number("ppg_scale");
  return m;
}

model::TrainConfig train_config(const RunConfig& c) {
  model::TrainConfig t;
  t.e0 = static_cast<long>(c.count("e0"));
  t.e1 = static_cast<long>(c.count("e1"));
  t.e2 = static_cast<long>(c.count("e2"));
  t.delta = c.number("delta");
  t.adam.lr = c.number("lr");
  t.adam.weight_decay = c.number("weight_decay");
  t.seed = c.count("seed");
  return t;
}

json metrics_json(const model::EvalReport& r) {
  const auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
  return {{"patients", r.patients}, {"cindex_os", opt(r.cindex_os)}, {"mbs_os", r.mbs_os},
          {"mae_ppg", r.ppg.mae},   {"rmse_ppg", r.ppg.rmse},         {"cindex_ohe", opt(r.cindex_ohe)},
          {"mbs_ohe", r.mbs_ohe}};
}

constexpr const char* kMetricsHeader = "split,patients,cindex_os,mbs_os,mae_ppg,rmse_ppg,cindex_ohe,mbs_ohe";

std::string metrics_csv(data::Split s, const model::EvalReport& r) {
  std::ostringstream o;
  o << kMetricsHeader << '\n'
    << data::to_string(s) << ',' << r.patients << ',' << na_or(r.cindex_os) << ',' << data::format_double(r.mbs_os)
    << ',' << data::format_double(r.ppg.mae) << ',' << data::format_double(r.ppg.rmse) << ','
    << na_or(r.cindex_ohe) << ',' << data::format_double(r.mbs_ohe) << '\n';
  return o.str();
}

void print_metrics(const Context& ctx, data::Split s, const model::EvalReport& r) {
  const auto c = [](const std::optional<double>& v) { return v ? fmt(*v) : std::string("NA"); };
  ctx.out << "split " << data::to_string(s) << " (" << r.patients << " patients)\n"
          << "  survival  C-index " << c(r.cindex_os) << "  mBS " << fmt(r.mbs_os) << '\n'
          << "  PPG       MAE " << fmt(r.ppg.mae) << "  RMSE " << fmt(r.ppg.rmse) << '\n'
          << "  OHE       C-index " << c(r.cindex_ohe) << "  mBS " << fmt(r.mbs_ohe) << '\n';
  if (!r.cindex_os) ctx.err << "warning: survival C-index undefined (constant risks or no comparable pairs)\n";
  if (!r.cindex_ohe) ctx.err << "warning: OHE C-index undefined (constant risks or no comparable pairs)\n";
}

json data_hashes(const fs::path& dir) {
  const auto p = data::DatasetPaths::in(dir);
  return {{"deep", hex(content_hash(p.deep_dir))},
          {"radiomics", hex(content_hash(p.radiomics))},
          {"clinical", hex(content_hash(p.clinical))},
          {"outcomes", hex(content_hash(p.outcomes))}};
}

std::uint64_t text_hash(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

void cmd_synth(const Context& ctx) {
  const fs::path& dir = ctx.out_dir;
  if (fs::exists(dir) && fs::is_directory(dir) && !fs::is_empty(dir)) {
    if (!ctx.force) throw ConfigError("refusing to write into non-empty directory " + dir.string() + " (pass --force)");
    const auto p = data::DatasetPaths::in(dir);
    for (const auto& f : {p.deep_dir, p.radiomics, p.clinical, p.outcomes, dir / "truth.csv"}) fs::remove_all(f);
  }
  const RunConfig& c = ctx.cfg;
  data::SyntheticSpec spec;
  spec.n_patients = c.count("n_patients");
  spec.deep_dim = c.count("deep_dim");
  spec.bag_min = c.count("bag_min");
  spec.bag_max = c.count("bag_max");
  spec.radiomics_groups = c.count("radiomics_groups");
  spec.noise = c.number("noise");
  spec.censor_rate = c.number("censor_rate");
  spec.train_frac = c.number("train_frac");
  spec.val_frac = c.number("val_frac");
  const auto synth = data::generate_synthetic(c.count("seed"), spec);

  ensure_dir(dir);
  data::write_dataset(synth.dataset, data::DatasetPaths::in(dir));
  std::ostringstream truth;
  truth << "id,latent_risk\n";
  for (std::size_t i = 0; i < synth.dataset.size(); ++i)
    truth << synth.dataset.patients[i].id << ',' << data::format_double(synth.latent_risk[i]) << '\n';
  write_text(dir / "truth.csv", truth.str());
  ctx.out << "wrote " << synth.dataset.size() << " patients (" << synth.dataset.radiomics_names.size()
          << " radiomics features) to " << dir.string() << '\n';
}

void cmd_train(const Context& ctx) {
  const auto start = std::chrono::steady_clock::now();
  const RunConfig& c = ctx.cfg;
  const auto ds = load_data(c);
  const auto prepared = model::prepare(ds);
  for (const auto& w : prepared.normalizer.warnings()) ctx.err << "warning: " << w << '\n';
  auto mc = model_config(c);
  model::fit_input_sizes(mc, prepared);
  const std::uint64_t seed = c.count("seed");
  model::Model m(mc, seed);
  ensure_dir(ctx.out_dir);

  const auto rows = model::staged_train(m, prepared.train, prepared.val, train_config(c), [&](const model::LogRow& r) {
    ctx.out << "stage " << r.stage << " epoch " << r.epoch << "  loss " << fmt(r.loss, "%.6f") << "  " << r.metric_name
            << ' ' << (r.metric_value ? fmt(*r.metric_value) : std::string("NA")) << '\n';
  });
  std::ostringstream log;
  model::write_run_log(log, rows);
  write_text(ctx.out_dir / "run_log.csv", log.str());

  const auto preds = model::predict_all(m, prepared.test);
  const auto report = model::evaluate(m, prepared.test, preds);
  print_metrics(ctx, data::Split::test, report);
  write_text(ctx.out_dir / "metrics_test.csv", metrics_csv(data::Split::test, report));

  const fs::path ckpt_path = ctx.out_dir / "checkpoint.json";
  model::save_checkpoint(ckpt_path, {m, prepared.normalizer, prepared.groups.hash(), seed});

  json manifest;
  manifest["command"] = "train";
  manifest["config"] = c.entries();
  manifest["data_dir"] = c.path("data_dir").string();
  manifest["data_hashes"] = data_hashes(c.path("data_dir"));
  manifest["run_hash"] = hex(text_hash(manifest["config"].dump() + manifest["data_hashes"].dump()));
  manifest["epochs"] = rows.size();
  manifest["split_sizes"] = {{"train", prepared.train.size()}, {"val", prepared.val.size()}, {"test", prepared.test.size()}};
  manifest["test_metrics"] = metrics_json(report);
  manifest["output_hashes"] = {{"checkpoint", hex(content_hash(ckpt_path))},
                               {"run_log", hex(content_hash(ctx.out_dir / "run_log.csv"))}};
  manifest["wall_time_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  write_text(ctx.out_dir / "manifest.json", manifest.dump(2) + "\n");
  ctx.out << "checkpoint " << ckpt_path.string() << '\n';
}

struct Trained {
  model::Checkpoint ckpt;
  model::PreparedData data;
};

Trained load_trained(const Context& ctx) {
  fs::path path = ctx.cfg.path("checkpoint");
  if (path.empty()) path = ctx.out_dir / "checkpoint.json";
  auto ckpt = model::load_checkpoint(path);
  const auto ds = load_data(ctx.cfg);
  if (data::build_group_index(ds.radiomics_names).hash() != ckpt.group_hash) {
    throw DataError("checkpoint/data mismatch: radiomics feature names differ from the training data");
  }
  if (ctx.cfg.count("bins") != ckpt.model.cfg.n_bins) {
    throw DataError("checkpoint/data mismatch: checkpoint has " + std::to_string(ckpt.model.cfg.n_bins) +
                    " time bins, config asks for " + ctx.cfg.text("bins"));
  }
  if (ds.deep_dim() != ckpt.model.cfg.backbone.deep_dim) {
    throw DataError("checkpoint/data mismatch: deep features have " + std::to_string(ds.deep_dim()) +
                    " columns, checkpoint expects " + std::to_string(ckpt.model.cfg.backbone.deep_dim));
  }
  auto prepared = model::prepare(ds, ckpt.normalizer);
  return {std::move(ckpt), std::move(prepared)};
}

void cmd_eval(const Context& ctx) {
  const auto t = load_trained(ctx);
  const auto s = split_of(ctx.cfg);
  const auto& inputs = t.data.split(s);
  const auto preds = model::predict_all(t.ckpt.model, inputs);
  const auto report = model::evaluate(t.ckpt.model, inputs, preds);
  print_metrics(ctx, s, report);
  ensure_dir(ctx.out_dir);
  write_text(ctx.out_dir / ("metrics_" + std::string(data::to_string(s)) + ".csv"), metrics_csv(s, report));
}

void cmd_km(const Context& ctx) {
  const std::string& task = ctx.cfg.text("task");
  if (task != "os" && task != "ohe") throw ConfigError("config key 'task' must be os or ohe, got '" + task + "'");
  const bool ohe = task == "ohe";
  const auto t = load_trained(ctx);
  const auto s = split_of(ctx.cfg);
  const auto& inputs = t.data.split(s);
  const auto preds = model::predict_all(t.ckpt.model, inputs);

  std::vector<double> risks;
  for (const auto& p : preds) risks.push_back(ohe ? p.risk_ohe : p.risk_os);
  const auto strata = metrics::median_risk_stratify(risks);
  const auto arm = [&](const std::vector<std::size_t>& idx, std::vector<double>& times, std::vector<int>& events) {
    for (std::size_t i : idx) {
      const auto& o = inputs[i].outcomes;
      times.push_back(ohe ? o.t_ohe : o.t_os);
      events.push_back(1 - (ohe ? o.c_ohe : o.c_os));
    }
  };
  std::vector<double> th, tl;
  std::vector<int> eh, el;
  arm(strata.high, th, eh);
  arm(strata.low, tl, el);

  std::vector<metrics::KmGroup> groups;
  if (!th.empty()) groups.push_back({"high", metrics::km_curve(th, eh)});
  if (!tl.empty()) groups.push_back({"low", metrics::km_curve(tl, el)});
  std::optional<double> p;
  if (th.empty() || tl.empty()) {
    ctx.err << "warning: median stratification left one risk group empty; log-rank p omitted\n";
  } else {
    p = metrics::logrank(th, eh, tl, el).p_value;
  }

  ensure_dir(ctx.out_dir);
  const std::string stem = "km_" + task + "_" + std::string(data::to_string(s));
  std::ostringstream csv;
  metrics::write_km_csv(csv, groups);
  write_text(ctx.out_dir / (stem + ".csv"), csv.str());
  const std::string title = std::string(ohe ? "OHE-free" : "Overall") + " survival, " + std::string(data::to_string(s));
  write_text(ctx.out_dir / (stem + ".svg"), metrics::km_svg(groups, p, title));
  ctx.out << "high risk " << th.size() << " / low risk " << tl.size() << " patients; log-rank p "
          << (p ? fmt(*p, "%.6g") : std::string("NA")) << '\n'
          << "wrote " << (ctx.out_dir / (stem + ".csv")).string() << " and .svg\n";
}

const data::ModelInput& find_patient(const model::PreparedData& d, data::Split s, const std::string& id) {
  if (id.empty()) {
    const auto& v = d.split(s);
    if (v.empty()) throw DataError("split " + std::string(data::to_string(s)) + " is empty");
    return v.front();
  }
  for (const auto* v : {&d.train, &d.val, &d.test})
    for (const auto& x : *v)
      if (x.id == id) return x;
  throw DataError("patient '" + id + "' not found");
}

void print_top(const Context& ctx, const char* title, const std::vector<interpret::NamedValue>& values, std::size_t k) {
  ctx.out << title << '\n';
  const auto top = interpret::top_attributions(values, k);
  for (std::size_t i = 0; i < top.size(); ++i)
    ctx.out << "  " << i + 1 << ". " << top[i].name << ' ' << fmt(top[i].value, "%+.6g") << '\n';
}

void cmd_ig(const Context& ctx) {
  const auto target = interpret::parse_target(ctx.cfg.text("target"));
  const auto t = load_trained(ctx);
  const auto& x = find_patient(t.data, split_of(ctx.cfg), ctx.cfg.text("patient"));
  const auto r = interpret::attribute(t.ckpt.model, x, t.data.groups, t.ckpt.normalizer, target,
                                      ctx.cfg.count("steps"));
  const std::size_t k = ctx.cfg.count("top_k");

  ensure_dir(ctx.out_dir);
  const std::string stem = std::string(interpret::to_string(target)) + "_" + x.id;
  std::ostringstream csv;
  interpret::write_attribution_csv(csv, r);
  write_text(ctx.out_dir / ("ig_" + stem + ".csv"), csv.str());

  fusion::Frozen frozen;
  {
    ad::Tape tape;
    frozen = t.ckpt.model.backbone.forward(tape, x, {}).frozen;
  }
  std::size_t ck = ctx.cfg.count("coattention_k");
  if (ck == 0) ck = t.data.groups.group_count();
  std::ostringstream co;
  interpret::write_coattention_csv(co, frozen, t.data.groups.group_names, ck);
  write_text(ctx.out_dir / ("coattention_" + x.id + ".csv"), co.str());

  ctx.out << "patient " << x.id << " target " << interpret::to_string(target) << ": output "
          << fmt(r.target_input, "%.6g") << ", baseline " << fmt(r.target_baseline, "%.6g")
          << ", completeness residual " << fmt(r.residual, "%.3g") << " (" << r.steps << " steps)\n";
  print_top(ctx, "top radiomics features", r.radiomics, k);
  print_top(ctx, "top radiomics groups", r.radiomics_groups, k);
  print_top(ctx, "top clinical features", r.clinical, k);
}

void cmd_inspect_groups(const Context& ctx) {
  const fs::path file = ctx.cfg.path("names_file");
  const auto names = file.empty() ? data::standard_radiomics_names() : data::read_name_list(file.string());
  const auto idx = data::build_group_index(names);
  ctx.out << idx.group_count() << " groups / " << idx.by_filter.size() << " filters / " << idx.by_class.size()
          << " classes\n"
          << idx.feature_count() << " features\n";
  if (!ctx.out_given) return;
  ensure_dir(ctx.out_dir);
  std::ostringstream csv;
  csv << "group,filter,class,size\n";
  for (std::size_t g = 0; g < idx.group_count(); ++g) {
    const auto n = data::parse_radiomics_name(idx.feature_names[idx.members[g].front()]);
    csv << idx.group_names[g] << ',' << n.filter << ',' << n.feature_class << ',' << idx.members[g].size() << '\n';
  }
  write_text(ctx.out_dir / "groups.csv", csv.str());
}

int fail(std::ostream& err, const std::string& cmd, const char* what, int code) {
  err << "tipsfuse " << cmd << ": error: " << what << '\n';
  return code;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multimodal TIPS prognosis: synthetic cohorts, staged training, evaluation and attribution", "tipsfuse"};
  app.require_subcommand(1, 1);
  app.fallthrough();
  std::string config_file, out_dir;
  std::uint64_t seed = 0;
  bool force = false;
  app.add_option("--config", config_file, "settings file with key = value lines");
  app.add_option("--out", out_dir, "output directory (overrides out_dir)");
  app.add_option("--seed", seed, "random seed (overrides seed)");
  app.add_flag("--force", force, "allow synth to overwrite a non-empty directory");
  const std::vector<std::pair<std::string, std::function<void(const Context&)>>> commands{
      {"synth", cmd_synth}, {"train", cmd_train}, {"eval", cmd_eval},
      {"km", cmd_km},       {"ig", cmd_ig},       {"inspect-groups", cmd_inspect_groups}};
  const std::map<std::string, std::string> help{
      {"synth", "generate a synthetic cohort with planted signal"},
      {"train", "staged training; writes checkpoint, run log and manifest"},
      {"eval", "survival, OHE and PPG metrics on one split"},
      {"km", "Kaplan-Meier curves and log-rank test by median risk"},
      {"ig", "integrated-gradients attribution and co-attention export"},
      {"inspect-groups", "summarise the radiomics group hierarchy"}};
  for (const auto& [name, fn] : commands) app.add_subcommand(name, help.at(name));

  std::vector<std::string> argv_store{"tipsfuse"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& a : argv_store) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  const std::string cmd = app.get_subcommands().front()->get_name();
  try {
    RunConfig cfg = config_file.empty() ? RunConfig{} : RunConfig::load(config_file);
    if (app.count("--seed") > 0) cfg.set("seed", std::to_string(seed));
    const bool out_given = !out_dir.empty();
    Context ctx{cfg, out_given ? fs::path(out_dir) : cfg.path("out_dir"), out_given, force, out, err};
    for (const auto& [name, fn] : commands)
      if (name == cmd) fn(ctx);
    return kOk;
  } catch (const ConfigError& e) {
    return fail(err, cmd, e.what(), kUsage);
  } catch (const std::invalid_argument& e) {
    return fail(err, cmd, e.what(), kUsage);
  } catch (const NumericError& e) {
    return fail(err, cmd, e.what(), kNumeric);
  } catch (const std::exception& e) {
    return fail(err, cmd, e.what(), kData);
  }
}

}  // namespace tipsfuse::cli
