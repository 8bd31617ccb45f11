#include <algorithm>
#include <cmath>
#include <limits>

#include "tipsfuse/errors.hpp"
#include "tipsfuse/fusion.hpp"

namespace tipsfuse::fusion {

namespace {

void init_uniform(Parameter& p, std::size_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> u(-bound, bound);
  for (auto& w : p.value.values()) w = u(rng);
}

}  // namespace

SnnEncoder::SnnEncoder(const std::string& name, std::size_t in, std::size_t d)
    : l1(name + ".l1", in, d), l2(name + ".l2", d, d) {}

void SnnEncoder::init(Rng& rng) {
  l1.init_lecun(rng);
  l2.init_lecun(rng);
}

Tensor SnnEncoder::forward(const Binder& b, const Tensor& x, DropoutCtx drop) const {
  Tensor h = nn::dropout(ad::selu(l1.forward(b, x)), drop);
  return nn::dropout(ad::selu(l2.forward(b, h)), drop);
}

void SnnEncoder::collect(ParamList& out) {
  l1.collect(out);
  l2.collect(out);
}

GapPool::GapPool(const std::string& name, std::size_t d, std::size_t n_c)
    : wa{name + ".wa", Matrix(d, d)},
      wb{name + ".wb", Matrix(d, d)},
      wc{name + ".wc", Matrix(d, n_c)},
      rho(name + ".rho", d, d) {}

void GapPool::init(Rng& rng) {
  init_uniform(wa, wa.value.rows(), rng);
  init_uniform(wb, wb.value.rows(), rng);
  init_uniform(wc, wc.value.rows(), rng);
  rho.init_default(rng);
}

Tensor GapPool::forward(const Binder& b, const Tensor& f, Matrix* weights) const {
  if (f.rows() == 0) throw ShapeError("gap: empty token set");
  Tensor gated = ad::mul(ad::tanh(ad::matmul(f, b(wa))), ad::sigmoid(ad::matmul(f, b(wb))));
  Tensor attn = ad::row_softmax(ad::transpose(ad::matmul(gated, b(wc))));  // n_c x K
  if (weights) *weights = attn.value();
  return rho.forward(b, ad::matmul(attn, f));
}

void GapPool::collect(ParamList& out) {
  out.push_back(&wa);
  out.push_back(&wb);
  out.push_back(&wc);
  rho.collect(out);
}

SetEncoder::SetEncoder(const std::string& name, std::size_t d, std::size_t h, std::size_t ffn)
    : heads(h),
      ln1(name + ".ln1", d),
      ln2(name + ".ln2", d),
      q(name + ".q", d, d),
      k(name + ".k", d, d),
      v(name + ".v", d, d),
      o(name + ".o", d, d),
      ff1(name + ".ff1", d, ffn),
      ff2(name + ".ff2", ffn, d) {
  if (h == 0 || d % h != 0) {
    throw ConfigError("set encoder: " + std::to_string(h) + " heads do not divide d = " + std::to_string(d));
  }
}

void SetEncoder::init(Rng& rng) {
  for (nn::Linear* l : {&q, &k, &v, &o, &ff1, &ff2}) l->init_default(rng);
}

Tensor SetEncoder::forward(const Binder& b, const Tensor& x) const {
  const std::size_t d = x.cols(), dk = d / heads;
  Tensor y = ln1.forward(b, x);
  Tensor qs = q.forward(b, y), ks = k.forward(b, y), vs = v.forward(b, y);
  std::vector<Tensor> parts;
  for (std::size_t h = 0; h < heads; ++h) {
    Tensor qh = ad::slice_cols(qs, h * dk, dk);
    Tensor kh = ad::slice_cols(ks, h * dk, dk);
    Tensor vh = ad::slice_cols(vs, h * dk, dk);
    Tensor scores = ad::scale(ad::matmul(qh, ad::transpose(kh)), 1.0 / std::sqrt(static_cast<double>(dk)));
    parts.push_back(ad::matmul(ad::row_softmax(scores), vh));
  }
  Tensor x1 = ad::add(x, o.forward(b, ad::concat_cols(parts)));
  Tensor z = ln2.forward(b, x1);
  return ad::add(x1, ff2.forward(b, ad::relu(ff1.forward(b, z))));
}

void SetEncoder::collect(ParamList& out) {
  ln1.collect(out);
  for (nn::Linear* l : {&q, &k, &v, &o}) l->collect(out);
  ln2.collect(out);
  ff1.collect(out);
  ff2.collect(out);
}

// ---------------------------------------------------------------------------
// Progressive orthogonality

double pod_gamma(double max0, double mean0, double sigma0, double ema_max, long t, long t_max,
                 double alpha) {
  if (t_max < 1) throw std::invalid_argument("pod_gamma: T must be >= 1");
  if (!(alpha > 0.0)) throw std::invalid_argument("pod_gamma: alpha must be > 0");
  const double sigma = std::max(sigma0, 1e-6);
  const double ratio = std::fabs(max0) < 1e-12 ? 1.0 : ema_max / max0;
  const double progress = std::clamp(static_cast<double>(t) / static_cast<double>(t_max), 0.0, 1.0);
  const double exponent = std::max(0.0, (max0 - mean0) / sigma * ratio * std::pow(1.0 - progress, alpha));
  return std::max(std::exp(-exponent), std::numeric_limits<double>::min());
}

double PodState::step(const Matrix& s) {
  if (s.empty()) throw ShapeError("pod: empty similarity matrix");
  const auto vals = s.values();
  const double mx = *std::max_element(vals.begin(), vals.end());
  if (!initialised) {
    double mean = 0.0;
    for (double v : vals) mean += v;
    mean /= static_cast<double>(vals.size());
    double var = 0.0;
    for (double v : vals) var += (v - mean) * (v - mean);
    max0 = mx;
    mean0 = mean;
    sigma0 = std::max(std::sqrt(var / static_cast<double>(vals.size())), 1e-6);
    ema_max = mx;
    initialised = true;
  }
  ema_max = beta * ema_max + (1.0 - beta) * mx;
  const double g = pod_gamma(max0, mean0, sigma0, ema_max, std::min(t, t_max), t_max, alpha);
  ++t;
  return g;
}

double percentile(std::vector<double> v, double q) {
  if (v.empty()) throw std::invalid_argument("percentile of an empty set");
  q = std::clamp(q, 0.0, 100.0);
  std::sort(v.begin(), v.end());
  const double rank = q / 100.0 * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(rank));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (rank - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

Tensor cosine_similarity(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.cols()) throw ShapeError("cosine_similarity: feature dims differ");
  return ad::matmul(ad::normalize_rows(a), ad::transpose(ad::normalize_rows(b)));
}

namespace {

Tensor masked_abs_mean(const Tensor& s, const Matrix& mask) {
  if (!mask.same_shape(s.value())) throw ShapeError("pod: mask shape " + mask.shape_string());
  double count = 0.0;
  for (double m : mask.values()) count += m;
  if (count == 0.0) throw NumericError("pod: empty mask");
  return ad::scale(ad::sum_all(ad::mul(ad::abs(s), s.tape()->constant(mask))), 1.0 / count);
}

}  // namespace

PodLoss pod_loss(const Tensor& similarity, double gamma) {
  if (!(gamma > 0.0) || gamma > 1.0) throw std::invalid_argument("pod_loss: gamma must lie in (0, 1]");
  const Matrix& s = similarity.value();
  PodLoss out;
  out.threshold = percentile(std::vector<double>(s.values().begin(), s.values().end()), 100.0 * (1.0 - gamma));
  out.mask = Matrix(s.rows(), s.cols());
  for (std::size_t i = 0; i < s.size(); ++i) out.mask[i] = s[i] >= out.threshold ? 1.0 : 0.0;
  out.loss = masked_abs_mean(similarity, out.mask);
  return out;
}

// ---------------------------------------------------------------------------
// OT-guided aggregation

ot::TransportPlan coattention_plan(const Matrix& source, const Matrix& target, const ot::OtConfig& cfg) {
  Matrix c = ot::cost_matrix(source, target);
  double mx = 0.0;
  for (double v : c.values()) mx = std::max(mx, v);
  if (mx > 0.0)
    for (auto& v : c.values()) v /= mx;
  return ot::sinkhorn(c, ot::uniform_marginal(source.rows()), ot::uniform_marginal(target.rows()), cfg);
}

Tensor ot_guided(const Tensor& source, const Tensor& target, const ot::OtConfig& cfg,
                 const Frozen* replay, PlanId id, Frozen& record) {
  const auto slot = static_cast<std::size_t>(id);
  if (record.plans.size() <= slot) record.plans.resize(slot + 1);
  if (replay && replay->plans.size() > slot) {
    const ot::TransportPlan& plan = replay->plans[slot];
    if (plan.rows() != source.rows() || plan.cols() != target.rows()) {
      throw ShapeError("replayed transport plan " + plan.plan.shape_string() + " does not fit " +
                       std::to_string(source.rows()) + " x " + std::to_string(target.rows()));
    }
    record.plans[slot] = plan;
  } else {
    record.plans[slot] = coattention_plan(source.value(), target.value(), cfg);
  }
  return ot::ot_aggregate(record.plans[slot], source);
}

MgraOutput mgra_forward(const Tensor& deep, const Tensor& radiomics, const GapPool& coarse,
                        const Binder& b, const ot::OtConfig& cfg, const Frozen* replay, Frozen& record,
                        Matrix* coarse_weights) {
  Tensor fine = ot_guided(deep, radiomics, cfg, replay, PlanId::deep_radiomics, record);
  Tensor rad_coarse = coarse.forward(b, radiomics, coarse_weights);
  Tensor deep_coarse = ot_guided(fine, rad_coarse, cfg, replay, PlanId::fine_coarse, record);
  return {ad::concat_rows(std::vector<Tensor>{fine, deep_coarse}),
          ad::concat_rows(std::vector<Tensor>{radiomics, rad_coarse})};
}

Tensor pod_loss_with_mask(const Tensor& similarity, const Matrix& mask) {
  return masked_abs_mean(similarity, mask);
}

}  // namespace tipsfuse::fusion
