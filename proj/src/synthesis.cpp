#include "sidgan/synthesis.hpp"

#include "sidgan/error.hpp"
#include "sidgan/training.hpp"

namespace sidgan::synth {

namespace fs = std::filesystem;

GeneratorRef generator_ref(nets::UNet& g, std::string checkpoint_id) {
  return {[&g](const torch::Tensor& f) { return train::apply_generator(g, f); }, std::move(checkpoint_id),
          g.spec().in_channels, g.spec().out_channels};
}

void SyntheticPair::validate() const {
  const auto& l = long_frames.frames;
  const auto& s = short_frames.frames;
  if (l.size() != s.size()) throw ShapeError("long and short clips differ in length");
  for (std::size_t t = 0; t < l.size(); ++t)
    if (l[t].sizes() != s[t].sizes()) throw ShapeError("long and short frame " + std::to_string(t) + " differ in shape");
}

namespace {

torch::Tensor apply(const GeneratorRef& g, const torch::Tensor& frame) {
  if (frame.dim() != 3 || frame.size(2) != g.in_channels)
    throw ShapeError("generator '" + g.checkpoint_id + "' expects " + std::to_string(g.in_channels) +
                     "-channel frames");
  auto out = g.map(frame).to(torch::kFloat32).contiguous();
  if (out.dim() != 3 || out.size(0) != frame.size(0) || out.size(1) != frame.size(1))
    throw ShapeError("generator '" + g.checkpoint_id + "' changed the frame size");
  return out;
}

}  // namespace

SyntheticPair synthesize_pair(const data::VideoClip& clip, const GeneratorRef& g_ab, const GeneratorRef& g_bc,
                              const std::string& source_id) {
  if (clip.frames.empty()) throw ShapeError("cannot synthesize from an empty clip");
  if (g_ab.out_channels != g_bc.in_channels)
    throw ShapeError("G_AB emits " + std::to_string(g_ab.out_channels) + " channels but G_BC expects " +
                     std::to_string(g_bc.in_channels));
  SyntheticPair p;
  p.source_id = source_id;
  p.generator_checkpoint_ids = {g_ab.checkpoint_id, g_bc.checkpoint_id};
  p.long_frames.fps = p.short_frames.fps = clip.fps;
  p.long_frames.static_flag = p.short_frames.static_flag = clip.static_flag;
  for (const auto& f : clip.frames) {
    auto lf = apply(g_ab, f);
    p.short_frames.frames.push_back(apply(g_bc, lf));
    p.long_frames.frames.push_back(std::move(lf));
  }
  p.validate();
  return p;
}

io::ManifestSet synthesize_dataset(const io::ManifestSet& set, const data::FrameSource& source,
                                   const GeneratorRef& g_ab, const GeneratorRef& g_bc, const fs::path& out_dir,
                                   const SynthesisOptions& options) {
  const auto& a = set.at(io::Domain::A, options.source_split);
  const std::size_t count = options.count == 0 ? a.size() : options.count;
  if (count > a.size())
    throw ManifestError("requested " + std::to_string(count) + " synthetic clips but only " +
                        std::to_string(a.size()) + " A clips are available");

  io::DatasetManifest mb{io::Domain::B, options.output_split, {}}, mc{io::Domain::C, options.output_split, {}};
  for (std::size_t i = 0; i < count; ++i) {
    const auto& src = a.entries[i];
    data::VideoClip clip;
    for (std::uint32_t t = 0; t < src.frame_count; ++t) clip.frames.push_back(source.frame(src, t));
    const auto pair = synthesize_pair(clip, g_ab, g_bc, src.id);

    io::ManifestEntry eb, ec;
    eb.id = "syn_long_" + src.id;
    ec.id = "syn_short_" + src.id;
    eb.path = "long/" + src.id;
    ec.path = "short/" + src.id;
    eb.kind = ec.kind = io::EntryKind::Video;
    eb.frame_count = ec.frame_count = static_cast<std::uint32_t>(clip.frames.size());
    eb.exposure_seconds = options.long_exposure_seconds;
    ec.exposure_seconds = options.short_exposure_seconds;
    eb.pair_id = ec.id;
    ec.pair_id = eb.id;
    for (auto* e : {&eb, &ec}) {
      e->attributes["source_id"] = src.id;
      e->attributes["g_ab"] = g_ab.checkpoint_id;
      e->attributes["g_bc"] = g_bc.checkpoint_id;
    }
    data::write_video(out_dir / eb.path, pair.long_frames.frames);
    data::write_video(out_dir / ec.path, pair.short_frames.frames);
    mb.entries.push_back(std::move(eb));
    mc.entries.push_back(std::move(ec));
  }

  io::ManifestSet out;
  out.manifests.push_back(std::move(mb));
  out.manifests.push_back(std::move(mc));
  io::validate(out);
  io::save_manifest(out_dir / "manifest.json", out);
  out.base_dir = out_dir;
  return out;
}

}  // namespace sidgan::synth
