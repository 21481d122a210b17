#include "sidgan/nets.hpp"

#include "sidgan/error.hpp"

namespace sidgan::nets {

namespace nn = torch::nn;
namespace F = torch::nn::functional;

namespace {

nn::Sequential conv_block(std::int64_t in, std::int64_t out, bool instance_norm) {
  nn::Sequential block;
  for (std::int64_t c : {in, out}) {
    block->push_back(nn::Conv2d(nn::Conv2dOptions(c, out, 3).stride(1).padding(1)));
    if (instance_norm) block->push_back(nn::InstanceNorm2d(nn::InstanceNorm2dOptions(out)));
    block->push_back(nn::ReLU());
  }
  return block;
}

std::string upsample_name(Upsample u) { return u == Upsample::Bilinear ? "bilinear" : "nearest"; }

Upsample parse_upsample(const std::string& s) {
  if (s == "bilinear") return Upsample::Bilinear;
  if (s == "nearest") return Upsample::Nearest;
  throw ConfigError("unknown upsample mode '" + s + "'");
}

}  // namespace

std::int64_t Network::parameter_count() const {
  std::int64_t n = 0;
  for (const auto& p : parameters()) n += p.numel();
  return n;
}

void check_unet_input(const UNetSpec& spec, std::int64_t height, std::int64_t width) {
  const auto div = spec.divisor();
  if (height % div != 0 || width % div != 0)
    throw ShapeError("U-Net input " + std::to_string(height) + "x" + std::to_string(width) +
                     " is not divisible by " + std::to_string(div));
}

UNet::UNet(const UNetSpec& spec) : spec_(spec) {
  if (spec.levels < 1 || spec.base_width < 1 || spec.in_channels < 1 || spec.out_channels < 1)
    throw ConfigError("invalid U-Net spec");
  auto width = [&](std::int64_t l) { return spec.base_width << l; };
  for (std::int64_t l = 0; l < spec.levels; ++l) {
    const auto in = l == 0 ? spec.in_channels : width(l - 1);
    encoder_.push_back(register_module("enc" + std::to_string(l), conv_block(in, width(l), spec.instance_norm)));
  }
  for (std::int64_t l = 0; l + 1 < spec.levels; ++l) {
    up_proj_.push_back(register_module("up" + std::to_string(l), nn::Conv2d(nn::Conv2dOptions(width(l + 1), width(l), 1))));
    decoder_.push_back(
        register_module("dec" + std::to_string(l), conv_block(2 * width(l), width(l), spec.instance_norm)));
  }
  head_ = register_module("head", nn::Conv2d(nn::Conv2dOptions(width(0), spec.out_channels, 1)));
}

torch::Tensor UNet::forward(const torch::Tensor& x) {
  if (x.dim() != 4 || x.size(1) != spec_.in_channels)
    throw ShapeError("U-Net expects (N, " + std::to_string(spec_.in_channels) + ", H, W) input");
  check_unet_input(spec_, x.size(2), x.size(3));

  std::vector<torch::Tensor> skips;
  auto h = x;
  for (std::int64_t l = 0; l < spec_.levels; ++l) {
    h = encoder_[l]->forward(h);
    if (l + 1 < spec_.levels) {
      skips.push_back(zeroed_skip_ == l ? torch::zeros_like(h) : h);
      h = F::max_pool2d(h, F::MaxPool2dFuncOptions(2).stride(2));
    }
  }
  for (std::int64_t l = spec_.levels - 2; l >= 0; --l) {
    auto opts = F::InterpolateFuncOptions().scale_factor(std::vector<double>{2.0, 2.0});
    if (spec_.upsample == Upsample::Bilinear)
      opts = opts.mode(torch::kBilinear).align_corners(false);
    else
      opts = opts.mode(torch::kNearest);
    h = up_proj_[l]->forward(F::interpolate(h, opts));
    h = decoder_[l]->forward(torch::cat({skips[l], h}, 1));
  }
  h = head_->forward(h);
  return spec_.final_activation == FinalActivation::Tanh ? torch::tanh(h) : h;
}

std::vector<LayerGeometry> UNet::geometry() const {
  std::vector<LayerGeometry> g;
  for (std::int64_t l = 0; l < spec_.levels; ++l) {
    g.push_back({3, 1});
    g.push_back({3, 1});
    if (l + 1 < spec_.levels) g.push_back({2, 2});
  }
  return g;
}

ConvStack::ConvStack(std::vector<Layer> layers) : layers_(std::move(layers)) {
  for (const auto& layer : layers_) {
    if (layer.max_pool) {
      body_->push_back(nn::MaxPool2d(nn::MaxPool2dOptions(2).stride(2)));
      continue;
    }
    const auto& c = layer.conv;
    body_->push_back(nn::Conv2d(
        nn::Conv2dOptions(c.in_channels, c.out_channels, c.kernel).stride(c.stride).padding(c.padding).bias(c.bias)));
    if (c.instance_norm) body_->push_back(nn::InstanceNorm2d(nn::InstanceNorm2dOptions(c.out_channels)));
    switch (c.activation) {
      case Activation::None: break;
      case Activation::ReLU: body_->push_back(nn::ReLU()); break;
      case Activation::LeakyReLU: body_->push_back(nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(0.2))); break;
      case Activation::Sigmoid: body_->push_back(nn::Sigmoid()); break;
    }
  }
  register_module("body", body_);
}

torch::Tensor ConvStack::forward(const torch::Tensor& x) { return body_->forward(x); }

std::vector<LayerGeometry> ConvStack::geometry() const {
  std::vector<LayerGeometry> g;
  for (const auto& layer : layers_)
    g.push_back(layer.max_pool ? LayerGeometry{2, 2} : LayerGeometry{layer.conv.kernel, layer.conv.stride});
  return g;
}

std::shared_ptr<UNet> build_unet(const UNetSpec& spec) { return std::make_shared<UNet>(spec); }

std::shared_ptr<ConvStack> build_patchgan(const PatchGanSpec& spec) {
  if (spec.downsample_layers < 1 || spec.base_width < 1 || spec.input_patch < 1)
    throw ConfigError("invalid PatchGAN spec");
  if (spec.input_patch % (std::int64_t{1} << spec.downsample_layers) != 0)
    throw ShapeError("PatchGAN input patch " + std::to_string(spec.input_patch) + " is not divisible by 2^" +
                     std::to_string(spec.downsample_layers));
  std::vector<ConvStack::Layer> layers;
  std::int64_t in = spec.in_channels;
  for (std::int64_t i = 0; i < spec.downsample_layers; ++i) {
    const std::int64_t out = spec.base_width << std::min<std::int64_t>(i, 3);
    ConvLayer c;
    c.in_channels = in;
    c.out_channels = out;
    c.kernel = 4;
    c.stride = 2;
    c.padding = 1;
    c.instance_norm = spec.instance_norm && i > 0;
    c.activation = Activation::LeakyReLU;
    layers.push_back({false, c});
    in = out;
  }
  ConvLayer head;
  head.in_channels = in;
  head.out_channels = 1;
  head.kernel = 1;
  layers.push_back({false, head});
  return std::make_shared<ConvStack>(std::move(layers));
}

std::int64_t patchgan_grid(const PatchGanSpec& spec, std::int64_t input_size) {
  std::int64_t s = std::min(input_size, spec.input_patch);
  for (std::int64_t i = 0; i < spec.downsample_layers; ++i) s = (s + 2 * 1 - 4) / 2 + 1;
  return s;
}

std::int64_t receptive_field(const Network& network) {
  if (!network.feedforward()) throw ShapeError("receptive field is only defined for feed-forward stacks");
  std::int64_t rf = 1, jump = 1;
  for (const auto& g : network.geometry()) {
    rf += (g.kernel - 1) * jump;
    jump *= g.stride;
  }
  return rf;
}

std::int64_t effective_context(const PatchGanSpec& spec, std::int64_t input_size) {
  return std::min(spec.input_patch, input_size);
}

double context_coverage(const PatchGanSpec& spec, std::int64_t input_size) {
  return static_cast<double>(effective_context(spec, input_size)) / static_cast<double>(input_size);
}

torch::Tensor random_patch(const torch::Tensor& x, std::int64_t patch, std::mt19937_64& rng) {
  const auto h = x.size(2), w = x.size(3);
  if (h <= patch && w <= patch) return x;
  std::int64_t top = 0, left = 0;
  if (h > patch) top = std::uniform_int_distribution<std::int64_t>(0, h - patch)(rng);
  if (w > patch) left = std::uniform_int_distribution<std::int64_t>(0, w - patch)(rng);
  return x.narrow(2, top, std::min(h, patch)).narrow(3, left, std::min(w, patch));
}

void init_weights(torch::nn::Module& module, std::uint64_t seed, double sigma) {
  torch::NoGradGuard no_grad;
  auto gen = at::detail::createCPUGenerator(seed);
  for (auto& p : module.parameters()) {
    if (p.dim() > 1) {
      p.copy_(torch::randn(p.sizes(), gen, p.options().device(torch::kCPU)) * sigma);
    } else {
      p.zero_();
    }
  }
}

void init_weights_he(torch::nn::Module& module, std::uint64_t seed) {
  torch::NoGradGuard no_grad;
  auto gen = at::detail::createCPUGenerator(seed);
  for (auto& p : module.parameters()) {
    if (p.dim() > 1) {
      const double fan_in = static_cast<double>(p.numel() / p.size(0));
      p.copy_(torch::randn(p.sizes(), gen, p.options().device(torch::kCPU)) * std::sqrt(2.0 / fan_in));
    } else {
      p.zero_();
    }
  }
}

ModelBundle ModelBundle::create(const BundleSpec& spec, std::uint64_t seed) {
  ModelBundle b;
  b.spec = spec;
  std::uint64_t k = 0;
  auto next_seed = [&] { return seed * 1000003ULL + (++k); };
  for (auto* g : {&b.g_ab, &b.g_ba, &b.g_bc, &b.g_cb}) {
    *g = build_unet(spec.generator);
    init_weights_he(**g, next_seed());
  }
  for (auto* d : {&b.d_a, &b.d_b, &b.d_c}) {
    *d = build_patchgan(spec.discriminator);
    init_weights(**d, next_seed());
  }
  if (spec.with_forward_model) {
    b.forward_model = build_unet(spec.forward_model);
    init_weights_he(*b.forward_model, next_seed());
  }
  b.validate();
  return b;
}

void ModelBundle::validate() const {
  for (const auto& g : {g_ab, g_ba, g_bc, g_cb})
    if (g && (g->spec().in_channels != 3 || g->spec().out_channels != 3))
      throw ShapeError("domain generators must map 3-channel RGB to 3-channel RGB");
  if (spec.discriminator.in_channels != 3) throw ShapeError("discriminators must consume 3-channel RGB");
  if (forward_model && (forward_model->spec().in_channels != 3 || forward_model->spec().out_channels != 3))
    throw ShapeError("forward model must map 3-channel short exposures to 3-channel RGB");
}

std::vector<std::pair<std::string, std::shared_ptr<Network>>> ModelBundle::named() const {
  std::vector<std::pair<std::string, std::shared_ptr<Network>>> out;
  auto add = [&](const char* id, std::shared_ptr<Network> n) {
    if (n) out.emplace_back(id, std::move(n));
  };
  add("g_ab", g_ab);
  add("g_ba", g_ba);
  add("g_bc", g_bc);
  add("g_cb", g_cb);
  add("d_a", d_a);
  add("d_b", d_b);
  add("d_c", d_c);
  add("forward", forward_model);
  return out;
}

nlohmann::json to_json(const UNetSpec& s) {
  return {{"in_channels", s.in_channels},
          {"out_channels", s.out_channels},
          {"levels", s.levels},
          {"base_width", s.base_width},
          {"upsample", upsample_name(s.upsample)},
          {"final_activation", s.final_activation == FinalActivation::Tanh ? "tanh" : "none"},
          {"instance_norm", s.instance_norm}};
}

nlohmann::json to_json(const PatchGanSpec& s) {
  return {{"in_channels", s.in_channels},
          {"downsample_layers", s.downsample_layers},
          {"base_width", s.base_width},
          {"input_patch", s.input_patch},
          {"instance_norm", s.instance_norm}};
}

nlohmann::json to_json(const BundleSpec& s) {
  return {{"generator", to_json(s.generator)},
          {"discriminator", to_json(s.discriminator)},
          {"forward_model", to_json(s.forward_model)},
          {"with_forward_model", s.with_forward_model}};
}

UNetSpec unet_spec_from_json(const nlohmann::json& j, UNetSpec s) {
  s.in_channels = j.value("in_channels", s.in_channels);
  s.out_channels = j.value("out_channels", s.out_channels);
  s.levels = j.value("levels", s.levels);
  s.base_width = j.value("base_width", s.base_width);
  if (j.contains("upsample")) s.upsample = parse_upsample(j["upsample"]);
  if (j.contains("final_activation")) {
    const auto a = j["final_activation"].get<std::string>();
    if (a != "tanh" && a != "none") throw ConfigError("unknown final activation '" + a + "'");
    s.final_activation = a == "tanh" ? FinalActivation::Tanh : FinalActivation::None;
  }
  s.instance_norm = j.value("instance_norm", s.instance_norm);
  return s;
}

PatchGanSpec patchgan_spec_from_json(const nlohmann::json& j, PatchGanSpec s) {
  s.in_channels = j.value("in_channels", s.in_channels);
  s.downsample_layers = j.value("downsample_layers", s.downsample_layers);
  s.base_width = j.value("base_width", s.base_width);
  s.input_patch = j.value("input_patch", s.input_patch);
  s.instance_norm = j.value("instance_norm", s.instance_norm);
  return s;
}

BundleSpec bundle_spec_from_json(const nlohmann::json& j, BundleSpec s) {
  if (j.contains("generator")) s.generator = unet_spec_from_json(j["generator"], s.generator);
  if (j.contains("discriminator")) s.discriminator = patchgan_spec_from_json(j["discriminator"], s.discriminator);
  if (j.contains("forward_model")) s.forward_model = unet_spec_from_json(j["forward_model"], s.forward_model);
  s.with_forward_model = j.value("with_forward_model", s.with_forward_model);
  return s;
}

}  // namespace sidgan::nets
