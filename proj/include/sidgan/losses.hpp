#pragma once

// Training objectives. Generators are passed as callables over NCHW batches so
// losses can be evaluated for networks and for closed-form test maps alike.

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include <torch/torch.h>

#include "sidgan/domains.hpp"

namespace sidgan::losses {

using Generator = std::function<torch::Tensor(const torch::Tensor&)>;

struct LossWeights {
  double lambda1 = 6.0;  // cycle
  double lambda2 = 6.0;  // identity (A-B) or supervised (B-C)

  static LossWeights ab() { return {6.0, 6.0}; }
  static LossWeights bc() { return {10.0, 10.0}; }
  void validate() const;
};

// mean|a - b|; the L1 term every reconstruction loss is built from.
torch::Tensor mean_l1(const torch::Tensor& a, const torch::Tensor& b);

// Mean binary cross-entropy over every logit of both grids, real -> 1 and fake -> 0.
torch::Tensor gan_loss_d(const torch::Tensor& real_logits, const torch::Tensor& fake_logits);
// Non-saturating generator loss: mean BCE of fake logits against 1.
torch::Tensor gan_loss_g(const torch::Tensor& fake_logits);

// mean|g_fwd(g_bwd(y)) - y| + mean|g_bwd(g_fwd(x)) - x|; x from the source domain, y from the target.
torch::Tensor cycle_loss(const Generator& g_fwd, const Generator& g_bwd, const torch::Tensor& x, const torch::Tensor& y);

// mean|g_ba(v) - v| + mean|g_ab(l) - l|; v from A, l from B.
torch::Tensor identity_loss(const Generator& g_ab, const Generator& g_ba, const torch::Tensor& v,
                            const torch::Tensor& l);

// mean|g_bc(l) - s| + mean|g_cb(s) - l| over aligned pairs.
torch::Tensor supervised_loss(const Generator& g_bc, const Generator& g_cb, const torch::Tensor& l,
                              const torch::Tensor& s);
// Batch form; throws ProtocolError unless the batch is paired.
torch::Tensor supervised_loss(const Generator& g_bc, const Generator& g_cb, const data::SampleBatch& batch);

// Adversarial terms of both directions plus the two weighted auxiliary terms.
struct ObjectiveParts {
  torch::Tensor gan_fwd, gan_bwd, cycle, aux;
};

// gan_fwd + gan_bwd + lambda1 * cycle + lambda2 * identity. Throws DivergenceError on non-finite parts.
torch::Tensor total_ab_objective(const ObjectiveParts& parts, const LossWeights& w);
// gan_fwd + gan_bwd + lambda1 * cycle + lambda2 * supervised.
torch::Tensor total_bc_objective(const ObjectiveParts& parts, const LossWeights& w);

double total_ab_objective(double gan_fwd, double gan_bwd, double cycle, double identity, const LossWeights& w);
double total_bc_objective(double gan_fwd, double gan_bwd, double cycle, double supervised, const LossWeights& w);

class PerceptualExtractor {
 public:
  virtual ~PerceptualExtractor() = default;
  // Differentiable NCHW -> feature map.
  virtual torch::Tensor features(const torch::Tensor& x) const = 0;
};

class IdentityFeatures final : public PerceptualExtractor {
 public:
  torch::Tensor features(const torch::Tensor& x) const override { return x; }
};

// Frozen random 3x3 convolutions with ReLU between them.
class RandomConvFeatures final : public PerceptualExtractor {
 public:
  explicit RandomConvFeatures(std::uint64_t seed = 77, std::int64_t in_channels = 3, std::int64_t width = 8,
                              int layers = 2);
  torch::Tensor features(const torch::Tensor& x) const override;

 private:
  std::vector<torch::Tensor> weights_;
};

struct ForwardLossWeights {
  double a = 1.0, b = 1.0, c = 1.0;
};

struct ForwardLossTerms {
  torch::Tensor l_a, l_b, l_c;

  torch::Tensor total(const ForwardLossWeights& w = {}) const { return w.a * l_a + w.b * l_b + w.c * l_c; }
};

// Static clips: l_a = |phi(p_i) - phi(p_j)|, l_b = |phi(p_i) - phi(gt)|, l_c = |phi(p_j) - phi(gt)|.
// Dynamic clips: l_b, l_c against per-frame ground truth and
// l_a = |(phi(p_i) - phi(p_j)) - (phi(gt_i) - phi(gt_j))|.
ForwardLossTerms forward_losses(const torch::Tensor& pred_i, const torch::Tensor& pred_j, const torch::Tensor& gt_i,
                                const torch::Tensor& gt_j, const PerceptualExtractor& phi, bool is_static);

}  // namespace sidgan::losses
