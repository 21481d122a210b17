#pragma once

// Generator and discriminator architectures.
//
// Generators are U-Nets: `levels` encoder blocks of two stride-1 3x3
// convolutions (ReLU), 2x2 max pooling between levels, and a decoder that
// upsamples by interpolation followed by a 1x1 convolution before each skip
// concatenation. Discriminators are PatchGAN stacks of stride-2 4x4
// convolutions with leaky ReLU, ending in a 1x1 logit head.
//
// Networks consume NCHW tensors.

#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

namespace sidgan::nets {

enum class Upsample { Bilinear, Nearest };
enum class FinalActivation { Tanh, None };
enum class Activation { None, ReLU, LeakyReLU, Sigmoid };

struct UNetSpec {
  std::int64_t in_channels = 3;
  std::int64_t out_channels = 3;
  std::int64_t levels = 5;
  std::int64_t base_width = 32;
  Upsample upsample = Upsample::Bilinear;
  FinalActivation final_activation = FinalActivation::Tanh;
  bool instance_norm = false;

  std::int64_t divisor() const { return std::int64_t{1} << (levels - 1); }
};

struct PatchGanSpec {
  std::int64_t in_channels = 3;
  std::int64_t downsample_layers = 4;
  std::int64_t base_width = 64;
  std::int64_t input_patch = 192;
  bool instance_norm = true;
};

// Kernel and stride of one spatial layer, for receptive-field bookkeeping.
struct LayerGeometry {
  std::int64_t kernel = 1;
  std::int64_t stride = 1;
};

class Network : public torch::nn::Module {
 public:
  virtual torch::Tensor forward(const torch::Tensor& x) = 0;
  // True when every output depends on the input through a single chain of layers.
  virtual bool feedforward() const = 0;
  virtual std::vector<LayerGeometry> geometry() const = 0;

  std::int64_t parameter_count() const;
};

using NetworkPtr = std::shared_ptr<Network>;

class UNet final : public Network {
 public:
  explicit UNet(const UNetSpec& spec);

  torch::Tensor forward(const torch::Tensor& x) override;
  bool feedforward() const override { return false; }
  std::vector<LayerGeometry> geometry() const override;

  const UNetSpec& spec() const { return spec_; }
  // Replaces the skip tensor of `level` with zeros; used to verify wiring.
  void zero_skip(std::optional<std::int64_t> level) { zeroed_skip_ = level; }

 private:
  UNetSpec spec_;
  std::vector<torch::nn::Sequential> encoder_;
  std::vector<torch::nn::Conv2d> up_proj_;
  std::vector<torch::nn::Sequential> decoder_;
  torch::nn::Conv2d head_{nullptr};
  std::optional<std::int64_t> zeroed_skip_;
};

struct ConvLayer {
  std::int64_t in_channels = 1;
  std::int64_t out_channels = 1;
  std::int64_t kernel = 3;
  std::int64_t stride = 1;
  std::int64_t padding = 0;
  bool instance_norm = false;
  Activation activation = Activation::None;
  bool bias = true;
};

// Sequential stack of convolutions (optionally with 2x2 max pooling).
class ConvStack final : public Network {
 public:
  struct Layer {
    bool max_pool = false;  // when true, the conv fields are ignored
    ConvLayer conv;
  };

  explicit ConvStack(std::vector<Layer> layers);

  torch::Tensor forward(const torch::Tensor& x) override;
  bool feedforward() const override { return true; }
  std::vector<LayerGeometry> geometry() const override;

  const std::vector<Layer>& layers() const { return layers_; }

 private:
  std::vector<Layer> layers_;
  torch::nn::Sequential body_;
};

std::shared_ptr<UNet> build_unet(const UNetSpec& spec);
std::shared_ptr<ConvStack> build_patchgan(const PatchGanSpec& spec);

// Logit grid side length for a square input of the given size.
std::int64_t patchgan_grid(const PatchGanSpec& spec, std::int64_t input_size);

// Input-pixel extent seen by one output unit; throws for non-feedforward networks.
std::int64_t receptive_field(const Network& network);

// Spatial context the discriminator judges at once on square inputs of
// `input_size`: inputs larger than the ingested patch are randomly cropped.
std::int64_t effective_context(const PatchGanSpec& spec, std::int64_t input_size);
double context_coverage(const PatchGanSpec& spec, std::int64_t input_size);

// Uniform random square crop of side `patch` from an NCHW batch (no-op if it already fits).
torch::Tensor random_patch(const torch::Tensor& x, std::int64_t patch, std::mt19937_64& rng);

// Zero-mean Gaussian weights (sigma 0.02) and zero biases, drawn from a seeded generator.
void init_weights(torch::nn::Module& module, std::uint64_t seed, double sigma = 0.02);
// He-normal weights (std sqrt(2 / fan_in)) and zero biases; used for the norm-free U-Nets.
void init_weights_he(torch::nn::Module& module, std::uint64_t seed);

// Checks the input dims against the U-Net divisibility constraint.
void check_unet_input(const UNetSpec& spec, std::int64_t height, std::int64_t width);

struct BundleSpec {
  UNetSpec generator;
  PatchGanSpec discriminator;
  UNetSpec forward_model;
  bool with_forward_model = true;
};

// The four generators, three discriminators and the optional forward model.
struct ModelBundle {
  std::shared_ptr<UNet> g_ab, g_ba, g_bc, g_cb;
  std::shared_ptr<ConvStack> d_a, d_b, d_c;
  std::shared_ptr<UNet> forward_model;
  BundleSpec spec;

  static ModelBundle create(const BundleSpec& spec, std::uint64_t seed);
  // Throws ShapeError if channel counts do not chain (3-channel RGB everywhere).
  void validate() const;
  // (id, module) for every present network, in a fixed order.
  std::vector<std::pair<std::string, std::shared_ptr<Network>>> named() const;
};

nlohmann::json to_json(const UNetSpec& s);
nlohmann::json to_json(const PatchGanSpec& s);
nlohmann::json to_json(const BundleSpec& s);
UNetSpec unet_spec_from_json(const nlohmann::json& j, UNetSpec defaults = {});
PatchGanSpec patchgan_spec_from_json(const nlohmann::json& j, PatchGanSpec defaults = {});
BundleSpec bundle_spec_from_json(const nlohmann::json& j, BundleSpec defaults = {});

}  // namespace sidgan::nets
