#include <string>

#include "tipsfuse/errors.hpp"
#include "tipsfuse/fusion.hpp"

namespace tipsfuse::fusion {

namespace {

void check_config(const BackboneConfig& c) {
  if (c.d == 0) throw ConfigError("backbone: d must be positive");
  if (c.n_c == 0) throw ConfigError("backbone: n_c must be positive");
  if (c.deep_dim == 0) throw ConfigError("backbone: deep_dim must be positive");
  if (c.ffn_mult == 0) throw ConfigError("backbone: ffn_mult must be positive");
  if (c.dropout < 0.0 || c.dropout >= 1.0) throw ConfigError("backbone: dropout must lie in [0, 1)");
  if (c.radiomics_sizes.empty()) throw ConfigError("backbone: no radiomics groups");
  if (c.clinical_sizes.empty()) throw ConfigError("backbone: no clinical groups");
  for (std::size_t s : c.radiomics_sizes)
    if (s == 0) throw ConfigError("backbone: empty radiomics group");
  for (std::size_t s : c.clinical_sizes)
    if (s == 0) throw ConfigError("backbone: empty clinical group");
}

void check_inputs(const BackboneConfig& c, const InputTensors& in) {
  if (in.deep.rows() == 0) throw ShapeError("backbone: empty deep bag");
  if (in.deep.cols() != c.deep_dim) {
    throw ShapeError("backbone: deep features have " + std::to_string(in.deep.cols()) + " columns, expected " +
                     std::to_string(c.deep_dim));
  }
  auto check_groups = [](const char* what, const std::vector<Tensor>& xs, const std::vector<std::size_t>& sizes) {
    if (xs.size() != sizes.size()) {
      throw ShapeError(std::string("backbone: ") + what + " has " + std::to_string(xs.size()) +
                       " groups, expected " + std::to_string(sizes.size()));
    }
    for (std::size_t g = 0; g < xs.size(); ++g) {
      if (xs[g].rows() != 1 || xs[g].cols() != sizes[g]) {
        throw ShapeError(std::string("backbone: ") + what + " group " + std::to_string(g) + " is " +
                         xs[g].value().shape_string() + ", expected 1x" + std::to_string(sizes[g]));
      }
    }
  };
  check_groups("radiomics", in.radiomics, c.radiomics_sizes);
  check_groups("clinical", in.clinical, c.clinical_sizes);
}

}  // namespace

InputTensors constant_inputs(Tape& tape, const data::ModelInput& in) {
  InputTensors out;
  out.deep = tape.constant(in.deep);
  for (const auto& m : in.radiomics) out.radiomics.push_back(tape.constant(m));
  for (const auto& m : in.clinical) out.clinical.push_back(tape.constant(m));
  return out;
}

Backbone::Backbone(BackboneConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
  check_config(cfg_);
  const std::size_t d = cfg_.d;
  for (std::size_t g = 0; g < cfg_.radiomics_sizes.size(); ++g)
    radiomics_encoders.emplace_back("radiomics." + std::to_string(g), cfg_.radiomics_sizes[g], d);
  deep_projection = nn::Linear("deep.projection", cfg_.deep_dim, d);
  for (std::size_t g = 0; g < cfg_.clinical_sizes.size(); ++g)
    clinical_encoders.emplace_back("clinical." + std::to_string(g), cfg_.clinical_sizes[g], d);
  coarse_pool = GapPool("mgra.coarse", d, cfg_.n_c);
  deep_encoder = SetEncoder("cgpe.deep", d, cfg_.heads, cfg_.ffn_mult * d);
  radiomics_encoder = SetEncoder("cgpe.radiomics", d, cfg_.heads, cfg_.ffn_mult * d);
  clinical_encoder = SetEncoder("cgpe.clinical", d, cfg_.heads, cfg_.ffn_mult * d);
  for (const char* name : {"pool.d", "pool.d_cli", "pool.r", "pool.r_cli", "pool.cli"})
    final_pools.emplace_back(name, d, 1);

  Rng rng(seed);
  for (auto& e : radiomics_encoders) e.init(rng);
  deep_projection.init_default(rng);
  for (auto& e : clinical_encoders) e.init(rng);
  coarse_pool.init(rng);
  deep_encoder.init(rng);
  radiomics_encoder.init(rng);
  clinical_encoder.init(rng);
  for (auto& p : final_pools) p.init(rng);
}

ParamList Backbone::params() {
  ParamList out;
  for (auto& e : radiomics_encoders) e.collect(out);
  deep_projection.collect(out);
  for (auto& e : clinical_encoders) e.collect(out);
  coarse_pool.collect(out);
  deep_encoder.collect(out);
  radiomics_encoder.collect(out);
  clinical_encoder.collect(out);
  for (auto& p : final_pools) p.collect(out);
  return out;
}

std::vector<const Parameter*> Backbone::params() const {
  const ParamList ps = const_cast<Backbone*>(this)->params();
  return {ps.begin(), ps.end()};
}

std::size_t Backbone::parameter_count() const {
  std::size_t n = 0;
  for (const Parameter* p : params()) n += p->value.size();
  return n;
}

void Backbone::zero() {
  for (Parameter* p : params()) p->value.fill(0.0);
}

Tensor Backbone::encode_radiomics(const Binder& b, std::span<const Tensor> groups, DropoutCtx drop) const {
  if (groups.size() != radiomics_encoders.size()) throw ShapeError("encode_radiomics: group count mismatch");
  std::vector<Tensor> rows;
  rows.reserve(groups.size());
  for (std::size_t g = 0; g < groups.size(); ++g) rows.push_back(radiomics_encoders[g].forward(b, groups[g], drop));
  return ad::concat_rows(rows);
}

Tensor Backbone::encode_deep(const Binder& b, const Tensor& bag) const {
  return deep_projection.forward(b, bag);
}

Tensor Backbone::encode_clinical(const Binder& b, std::span<const Tensor> groups, DropoutCtx drop) const {
  if (groups.size() != clinical_encoders.size()) throw ShapeError("encode_clinical: group count mismatch");
  std::vector<Tensor> rows;
  rows.reserve(groups.size());
  for (std::size_t g = 0; g < groups.size(); ++g) rows.push_back(clinical_encoders[g].forward(b, groups[g], drop));
  return ad::concat_rows(rows);
}

ForwardResult Backbone::forward(Tape& tape, const data::ModelInput& in, const ForwardOptions& opt) const {
  return forward(tape, constant_inputs(tape, in), opt);
}

ForwardResult Backbone::forward(Tape& tape, const InputTensors& in, const ForwardOptions& opt) const {
  check_inputs(cfg_, in);
  const Binder b(tape, opt.trainable);
  const DropoutCtx drop{opt.dropout_rng, cfg_.dropout};
  ForwardResult out;
  out.frozen.plans.resize(4);
  out.gap_weights.resize(1 + final_pools.size());

  // Fine-to-coarse alignment of deep and radiomics tokens.
  const Tensor f_rad = encode_radiomics(b, in.radiomics, drop);
  const Tensor f_deep = encode_deep(b, in.deep);
  const MgraOutput mg =
      mgra_forward(f_deep, f_rad, coarse_pool, b, cfg_.ot, opt.replay, out.frozen, &out.gap_weights[0]);

  const Tensor sim = cosine_similarity(mg.deep_cat, mg.radiomics_cat);
  out.similarity = sim.value();
  if (opt.pod) {
    if (opt.replay && opt.replay->pod_mask) {
      out.ortho = pod_loss_with_mask(sim, *opt.replay->pod_mask);
      out.frozen.pod_mask = opt.replay->pod_mask;
    } else {
      out.gamma = opt.pod->step(sim.value());
      PodLoss pl = pod_loss(sim, out.gamma);
      out.ortho = pl.loss;
      out.frozen.pod_mask = std::move(pl.mask);
    }
  }

  // Clinically guided aggregation.
  const Tensor h_deep = deep_encoder.forward(b, mg.deep_cat);
  const Tensor h_rad = radiomics_encoder.forward(b, mg.radiomics_cat);
  const Tensor h_cli = clinical_encoder.forward(b, encode_clinical(b, in.clinical, drop));
  const Tensor h_deep_cli = ot_guided(h_deep, h_cli, cfg_.ot, opt.replay, PlanId::deep_clinical, out.frozen);
  const Tensor h_rad_cli = ot_guided(h_rad, h_cli, cfg_.ot, opt.replay, PlanId::radiomics_clinical, out.frozen);

  const Tensor sets[5] = {h_deep, h_deep_cli, h_rad, h_rad_cli, h_cli};
  std::vector<Tensor> pooled;
  for (std::size_t i = 0; i < 5; ++i) pooled.push_back(final_pools[i].forward(b, sets[i], &out.gap_weights[i + 1]));
  out.h_final = ad::concat_cols(pooled);
  return out;
}

}  // namespace tipsfuse::fusion
