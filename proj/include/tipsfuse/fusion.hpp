#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tipsfuse/dataset.hpp"
#include "tipsfuse/nn.hpp"
#include "tipsfuse/ot.hpp"

namespace tipsfuse::fusion {

using ad::Matrix;
using ad::Parameter;
using ad::ParamList;
using ad::Tape;
using ad::Tensor;
using nn::Binder;
using nn::DropoutCtx;
using nn::Rng;

// Two SELU layers, in -> d -> d, dropout after each activation.
struct SnnEncoder {
  nn::Linear l1, l2;

  SnnEncoder() = default;
  SnnEncoder(const std::string& name, std::size_t in, std::size_t d);
  void init(Rng& rng);
  Tensor forward(const Binder& b, const Tensor& x, DropoutCtx drop) const;
  void collect(ParamList& out);
};

// Gated attention pooling of K tokens into n_c summaries, each passed through
// the affine map rho.
struct GapPool {
  Parameter wa, wb;  // d x d
  Parameter wc;      // d x n_c, one attention vector per column
  nn::Linear rho;

  GapPool() = default;
  GapPool(const std::string& name, std::size_t d, std::size_t n_c);
  void init(Rng& rng);
  std::size_t heads() const { return wc.value.cols(); }
  // Returns n_c x d; writes the n_c x K attention weights when asked.
  Tensor forward(const Binder& b, const Tensor& f, Matrix* weights = nullptr) const;
  void collect(ParamList& out);
};

// Pre-norm transformer block without positional encoding.
struct SetEncoder {
  std::size_t heads = 4;
  nn::LayerNorm ln1, ln2;
  nn::Linear q, k, v, o;
  nn::Linear ff1, ff2;

  SetEncoder() = default;
  SetEncoder(const std::string& name, std::size_t d, std::size_t heads, std::size_t ffn);
  void init(Rng& rng);
  Tensor forward(const Binder& b, const Tensor& x) const;
  void collect(ParamList& out);
};

// Scalar schedule controlling how many similarity entries the orthogonality
// loss covers.
double pod_gamma(double max0, double mean0, double sigma0, double ema_max, long t, long t_max,
                 double alpha = 0.9);

struct PodState {
  bool initialised = false;
  double max0 = 0.0;
  double mean0 = 0.0;
  double sigma0 = 1.0;
  double ema_max = 0.0;
  double beta = 0.99;
  double alpha = 0.9;
  long t = 0;
  long t_max = 1;

  // Captures the t = 0 statistics on first use, updates the moving maximum,
  // returns gamma_t and advances t.
  double step(const Matrix& similarity);
};

// numpy-style linear-interpolation percentile, q in [0, 100].
double percentile(std::vector<double> values, double q);

struct PodLoss {
  Tensor loss;
  Matrix mask;
  double threshold = 0.0;
};
// Mean |cosine| over entries of the similarity matrix at or above the
// (100 (1 - gamma))-th percentile.
PodLoss pod_loss(const Tensor& similarity, double gamma);
// Same loss over a previously selected mask.
Tensor pod_loss_with_mask(const Tensor& similarity, const Matrix& mask);
Tensor cosine_similarity(const Tensor& a, const Tensor& b);

struct BackboneConfig {
  std::size_t d = 256;
  std::size_t n_c = 6;
  std::size_t deep_dim = 1280;
  std::vector<std::size_t> radiomics_sizes;  // one per Level II group
  std::vector<std::size_t> clinical_sizes;   // one per clinical group
  std::size_t heads = 4;
  std::size_t ffn_mult = 2;
  double dropout = 0.25;
  ot::OtConfig ot;
};

// Transport plans and POD mask of one forward pass. Supplying them back to a
// later pass makes that pass reuse them instead of re-solving, which fixes
// the function being differentiated.
struct Frozen {
  std::vector<ot::TransportPlan> plans;  // d->r, (d,f)->(r,c), d->cli, r->cli
  std::optional<Matrix> pod_mask;
};

enum class PlanId : std::size_t { deep_radiomics = 0, fine_coarse = 1, deep_clinical = 2, radiomics_clinical = 3 };

struct ForwardOptions {
  bool trainable = false;       // parameters as leaves
  Rng* dropout_rng = nullptr;   // null disables dropout
  PodState* pod = nullptr;      // when set, the orthogonality loss is built
  const Frozen* replay = nullptr;
};

struct ForwardResult {
  Tensor h_final;  // 1 x 5d
  Tensor ortho;    // invalid unless requested
  double gamma = 1.0;
  Frozen frozen;
  Matrix similarity;
  std::vector<Matrix> gap_weights;  // coarse pool, then the five final pools
};

// Tensor-level inputs so callers can differentiate with respect to them.
struct InputTensors {
  Tensor deep;
  std::vector<Tensor> radiomics;
  std::vector<Tensor> clinical;
};
InputTensors constant_inputs(Tape& tape, const data::ModelInput& in);

class Backbone {
 public:
  Backbone() = default;
  Backbone(BackboneConfig cfg, std::uint64_t seed);

  const BackboneConfig& config() const { return cfg_; }
  std::size_t n_groups() const { return cfg_.radiomics_sizes.size(); }
  std::size_t n_clinical() const { return cfg_.clinical_sizes.size(); }
  std::size_t output_dim() const { return 5 * cfg_.d; }

  ForwardResult forward(Tape& tape, const InputTensors& in, const ForwardOptions& opt) const;
  ForwardResult forward(Tape& tape, const data::ModelInput& in, const ForwardOptions& opt) const;

  ParamList params();
  std::vector<const Parameter*> params() const;
  std::size_t parameter_count() const;
  void zero();

  // Pieces exposed for focused tests.
  Tensor encode_radiomics(const Binder& b, std::span<const Tensor> groups, DropoutCtx drop) const;
  Tensor encode_deep(const Binder& b, const Tensor& bag) const;
  Tensor encode_clinical(const Binder& b, std::span<const Tensor> groups, DropoutCtx drop) const;

  std::vector<SnnEncoder> radiomics_encoders;
  nn::Linear deep_projection;
  std::vector<SnnEncoder> clinical_encoders;
  GapPool coarse_pool;
  SetEncoder deep_encoder, radiomics_encoder, clinical_encoder;
  std::vector<GapPool> final_pools;  // d, (d,cli), r, (r,cli), cli

 private:
  BackboneConfig cfg_;
};

// Sinkhorn between the row sets of source and target with uniform marginals,
// after scaling the Euclidean cost by its largest entry.
ot::TransportPlan coattention_plan(const Matrix& source, const Matrix& target, const ot::OtConfig& cfg);

// Aggregates `source` onto the target set via a solved or replayed plan.
Tensor ot_guided(const Tensor& source, const Tensor& target, const ot::OtConfig& cfg,
                 const Frozen* replay, PlanId id, Frozen& record);

struct MgraOutput {
  Tensor deep_cat;       // N_cat x d
  Tensor radiomics_cat;  // N_cat x d
};
MgraOutput mgra_forward(const Tensor& deep, const Tensor& radiomics, const GapPool& coarse,
                        const Binder& b, const ot::OtConfig& cfg, const Frozen* replay, Frozen& record,
                        Matrix* coarse_weights = nullptr);

}  // namespace tipsfuse::fusion
