#include "sidgan/losses.hpp"

#include <cmath>

#include "sidgan/error.hpp"

namespace sidgan::losses {

namespace F = torch::nn::functional;

namespace {

void require_same_shape(const torch::Tensor& a, const torch::Tensor& b, const char* what) {
  if (!a.defined() || !b.defined() || !a.sizes().equals(b.sizes()))
    throw ShapeError(std::string(what) + ": shape mismatch");
}

void require_nonempty(const torch::Tensor& t, const char* what) {
  if (!t.defined() || t.numel() == 0) throw ShapeError(std::string(what) + ": empty domain input");
}

torch::Tensor l1(const torch::Tensor& a, const torch::Tensor& b, const char* what) {
  require_same_shape(a, b, what);
  return (a - b).abs().mean();
}

void require_finite(const ObjectiveParts& p) {
  for (const auto* t : {&p.gan_fwd, &p.gan_bwd, &p.cycle, &p.aux}) {
    if (!t->defined()) throw ShapeError("objective part is undefined");
    if (!torch::isfinite(*t).all().item<bool>()) throw DivergenceError("non-finite loss term");
  }
}

void require_finite(std::initializer_list<double> parts) {
  for (double v : parts)
    if (!std::isfinite(v)) throw DivergenceError("non-finite loss term");
}

}  // namespace

torch::Tensor mean_l1(const torch::Tensor& a, const torch::Tensor& b) { return l1(a, b, "L1 term"); }

void LossWeights::validate() const {
  if (!(lambda1 >= 0) || !(lambda2 >= 0)) throw ConfigError("loss weights must be nonnegative");
}

torch::Tensor gan_loss_d(const torch::Tensor& real_logits, const torch::Tensor& fake_logits) {
  require_same_shape(real_logits, fake_logits, "discriminator loss");
  const auto real = F::binary_cross_entropy_with_logits(
      real_logits, torch::ones_like(real_logits), F::BinaryCrossEntropyWithLogitsFuncOptions().reduction(torch::kSum));
  const auto fake = F::binary_cross_entropy_with_logits(
      fake_logits, torch::zeros_like(fake_logits), F::BinaryCrossEntropyWithLogitsFuncOptions().reduction(torch::kSum));
  return (real + fake) / static_cast<double>(real_logits.numel() + fake_logits.numel());
}

torch::Tensor gan_loss_g(const torch::Tensor& fake_logits) {
  require_nonempty(fake_logits, "generator loss");
  return F::binary_cross_entropy_with_logits(fake_logits, torch::ones_like(fake_logits));
}

torch::Tensor cycle_loss(const Generator& g_fwd, const Generator& g_bwd, const torch::Tensor& x,
                         const torch::Tensor& y) {
  require_nonempty(x, "cycle loss");
  require_nonempty(y, "cycle loss");
  return l1(g_fwd(g_bwd(y)), y, "cycle loss") + l1(g_bwd(g_fwd(x)), x, "cycle loss");
}

torch::Tensor identity_loss(const Generator& g_ab, const Generator& g_ba, const torch::Tensor& v,
                            const torch::Tensor& l) {
  require_nonempty(v, "identity loss");
  require_nonempty(l, "identity loss");
  return l1(g_ba(v), v, "identity loss") + l1(g_ab(l), l, "identity loss");
}

torch::Tensor supervised_loss(const Generator& g_bc, const Generator& g_cb, const torch::Tensor& l,
                              const torch::Tensor& s) {
  require_nonempty(l, "supervised loss");
  require_same_shape(l, s, "supervised loss");
  return l1(g_bc(l), s, "supervised loss") + l1(g_cb(s), l, "supervised loss");
}

torch::Tensor supervised_loss(const Generator& g_bc, const Generator& g_cb, const data::SampleBatch& batch) {
  if (!batch.paired) throw ProtocolError("supervised loss needs a paired batch");
  batch.validate();
  std::vector<torch::Tensor> l, s;
  for (const auto& x : batch.b) l.push_back(x.image);
  for (const auto& x : batch.c) s.push_back(x.image);
  return supervised_loss(g_bc, g_cb, data::to_nchw(l), data::to_nchw(s));
}

torch::Tensor total_ab_objective(const ObjectiveParts& p, const LossWeights& w) {
  w.validate();
  require_finite(p);
  return p.gan_fwd + p.gan_bwd + w.lambda1 * p.cycle + w.lambda2 * p.aux;
}

torch::Tensor total_bc_objective(const ObjectiveParts& p, const LossWeights& w) {
  // Same weighted form; the auxiliary term is the supervised loss instead of identity.
  return total_ab_objective(p, w);
}

double total_ab_objective(double gan_fwd, double gan_bwd, double cycle, double identity, const LossWeights& w) {
  w.validate();
  require_finite({gan_fwd, gan_bwd, cycle, identity});
  return gan_fwd + gan_bwd + w.lambda1 * cycle + w.lambda2 * identity;
}

double total_bc_objective(double gan_fwd, double gan_bwd, double cycle, double supervised, const LossWeights& w) {
  return total_ab_objective(gan_fwd, gan_bwd, cycle, supervised, w);
}

RandomConvFeatures::RandomConvFeatures(std::uint64_t seed, std::int64_t in_channels, std::int64_t width, int layers) {
  if (layers < 1 || width < 1) throw ConfigError("invalid perceptual extractor shape");
  auto gen = at::detail::createCPUGenerator(seed);
  std::int64_t in = in_channels;
  for (int i = 0; i < layers; ++i) {
    const double scale = std::sqrt(2.0 / static_cast<double>(in * 9));
    weights_.push_back(torch::randn({width, in, 3, 3}, gen, torch::kFloat32) * scale);
    in = width;
  }
}

torch::Tensor RandomConvFeatures::features(const torch::Tensor& x) const {
  auto h = x;
  for (std::size_t i = 0; i < weights_.size(); ++i) {
    h = F::conv2d(h, weights_[i].to(h.scalar_type()), F::Conv2dFuncOptions().padding(1));
    if (i + 1 < weights_.size()) h = torch::relu(h);
  }
  return h;
}

ForwardLossTerms forward_losses(const torch::Tensor& pred_i, const torch::Tensor& pred_j, const torch::Tensor& gt_i,
                                const torch::Tensor& gt_j, const PerceptualExtractor& phi, bool is_static) {
  require_same_shape(pred_i, pred_j, "forward losses");
  require_same_shape(pred_i, gt_i, "forward losses");
  require_same_shape(gt_i, gt_j, "forward losses");
  const auto fi = phi.features(pred_i), fj = phi.features(pred_j);
  ForwardLossTerms t;
  if (is_static) {
    if (!torch::equal(gt_i, gt_j)) throw ProtocolError("static clip has differing ground-truth frames");
    const auto fg = phi.features(gt_i);
    t.l_a = l1(fi, fj, "forward losses");
    t.l_b = l1(fi, fg, "forward losses");
    t.l_c = l1(fj, fg, "forward losses");
  } else {
    const auto gi = phi.features(gt_i), gj = phi.features(gt_j);
    t.l_a = l1(fi - fj, gi - gj, "forward losses");
    t.l_b = l1(fi, gi, "forward losses");
    t.l_c = l1(fj, gj, "forward losses");
  }
  return t;
}

}  // namespace sidgan::losses
