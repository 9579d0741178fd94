// SPDX-License-Identifier: Apache-2.0
//
// Checkpoint container: "XCKP", u32 version, u64 manifest length, JSON
// manifest, then one XTEN record per tensor in manifest order.
#pragma once

#include <fstream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "amfmn/model.hpp"

namespace amfmn {

inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

template <typename ModelT, typename Fn>
void for_each_parameter(ModelT& m, Fn&& fn) {
  fn("embedding", m.embedding.weights);
  for (auto [dir, name] : {std::pair{&m.gru.forward, "gru.forward"}, std::pair{&m.gru.backward, "gru.backward"}}) {
    const std::string p = name;
    fn(p + ".w_input", dir->w_input);
    fn(p + ".w_hidden", dir->w_hidden);
    fn(p + ".b_input", dir->b_input);
    fn(p + ".b_hidden", dir->b_hidden);
  }
  fn("keyword_mlp.w1", m.keyword_mlp.w1);
  fn("keyword_mlp.b1", m.keyword_mlp.b1);
  fn("keyword_mlp.w2", m.keyword_mlp.w2);
  fn("keyword_mlp.b2", m.keyword_mlp.b2);
  for (std::size_t s = 0; s < kPyramidStages; ++s) {
    fn("extractor.kernel." + std::to_string(s + 1), m.extractor.kernels[s]);
    fn("extractor.bias." + std::to_string(s + 1), m.extractor.biases[s]);
  }
  fn("extractor.projection", m.extractor.projection);
  fn("mvsa.low_kernels", m.mvsa.low_kernels);
  fn("mvsa.low_bias", m.mvsa.low_bias);
  fn("mvsa.high_kernels", m.mvsa.high_kernels);
  fn("mvsa.high_bias", m.mvsa.high_bias);
  fn("mvsa.info_kernels", m.mvsa.info_kernels);
  fn("mvsa.info_bias", m.mvsa.info_bias);
  fn("mvsa.gate_kernels", m.mvsa.gate_kernels);
  fn("mvsa.gate_bias", m.mvsa.gate_bias);
  fn("mvsa.mask_projection", m.mvsa.mask_projection);
  fn("mvsa.mask_bias", m.mvsa.mask_bias);
  fn("vga.first.weight", m.vga.first.weight);
  fn("vga.first.bias", m.vga.first.bias);
  if (m.vga.variant != VgaVariant::soft) {
    fn("vga.second.weight", m.vga.second.weight);
    fn("vga.second.bias", m.vga.second.bias);
  }
  fn("heads.visual", m.heads.visual);
  fn("heads.sentence", m.heads.sentence);
  fn("heads.keyword", m.heads.keyword);
  fn("heads.gate.weight", m.heads.gate.weight);
  fn("heads.gate.bias", m.heads.gate.bias);
}

inline nlohmann::json config_to_json(const ModelConfig& c) {
  return {{"variant", std::string(to_string(c.variant))},
          {"image_size", c.image_size},
          {"channels", c.channels},
          {"visual_dim", c.visual_dim},
          {"word_dim", c.word_dim},
          {"hidden", c.hidden},
          {"joint_dim", c.joint_dim},
          {"low_channels", c.low_channels},
          {"high_channels", c.high_channels},
          {"info_channels", c.info_channels},
          {"seed", c.seed}};
}

inline ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.variant = parse_variant(j.at("variant").get<std::string>());
  c.image_size = j.at("image_size").get<std::size_t>();
  c.channels = j.at("channels").get<ChannelPlan>();
  c.visual_dim = j.at("visual_dim").get<std::size_t>();
  c.word_dim = j.at("word_dim").get<std::size_t>();
  c.hidden = j.at("hidden").get<std::size_t>();
  c.joint_dim = j.at("joint_dim").get<std::size_t>();
  c.low_channels = j.at("low_channels").get<std::size_t>();
  c.high_channels = j.at("high_channels").get<std::size_t>();
  c.info_channels = j.at("info_channels").get<std::size_t>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

}  // namespace detail

struct Checkpoint {
  Model model;
  nlohmann::json metadata = nlohmann::json::object();  // free-form: training settings, split
};

inline void save_checkpoint(std::ostream& os, const Checkpoint& ck) {
  const Model& m = ck.model;
  nlohmann::json manifest;
  manifest["format"] = "amfmn-checkpoint";
  manifest["version"] = kCheckpointVersion;
  manifest["config"] = detail::config_to_json(m.config);
  manifest["slopes"] = {{"extractor", m.extractor.slope}, {"low", m.mvsa.low_slope}, {"high", m.mvsa.high_slope}};
  manifest["guidance"] = "visual-guided attention uses F_v before the W_v projection";
  std::vector<std::string> words(m.vocab.words().begin() + 1, m.vocab.words().end());
  manifest["vocabulary"] = words;
  manifest["metadata"] = ck.metadata;
  nlohmann::json tensors = nlohmann::json::array();
  std::vector<const Tensor*> order;
  detail::for_each_parameter(m, [&](const std::string& name, const Tensor& t) {
    tensors.push_back({{"name", name}, {"shape", t.shape()}});
    order.push_back(&t);
  });
  manifest["tensors"] = tensors;

  const std::string text = manifest.dump();
  os.write("XCKP", 4);
  detail::put_le(os, kCheckpointVersion, 4);
  detail::put_le(os, text.size(), 8);
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const Tensor* t : order) write_tensor(os, *t);
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write checkpoint " + path);
  save_checkpoint(os, ck);
  if (!os) throw IoError("failed writing checkpoint " + path);
}

/// Loads a checkpoint. When `expected` is given, a checkpoint of another VGA
/// variant is rejected.
inline Checkpoint load_checkpoint(std::istream& is, std::optional<VgaVariant> expected = std::nullopt) {
  char magic[4];
  if (!is.read(magic, 4) || std::string(magic, 4) != "XCKP") throw FormatError("not a checkpoint (bad magic)");
  const auto version = detail::get_le(is, 4, "checkpoint version");
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                      std::to_string(kCheckpointVersion) + ")");
  }
  const auto len = detail::get_le(is, 8, "manifest length");
  if (len > (std::uint64_t{1} << 30)) throw FormatError("checkpoint manifest too large");
  std::string text(len, '\0');
  if (!is.read(text.data(), static_cast<std::streamsize>(len))) throw FormatError("truncated checkpoint manifest");

  nlohmann::json manifest;
  ModelConfig config;
  Vocabulary vocab;
  double slopes[3] = {0.25, 0.25, 0.25};
  std::vector<std::string> listed;
  try {
    manifest = nlohmann::json::parse(text);
    config = detail::config_from_json(manifest.at("config"));
    for (const auto& w : manifest.at("vocabulary")) vocab.add(w.get<std::string>());
    if (manifest.contains("slopes")) {
      const auto& sl = manifest.at("slopes");
      slopes[0] = sl.value("extractor", 0.25);
      slopes[1] = sl.value("low", 0.25);
      slopes[2] = sl.value("high", 0.25);
    }
    for (const auto& t : manifest.at("tensors")) listed.push_back(t.at("name").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed checkpoint manifest: ") + e.what());
  }
  if (expected && *expected != config.variant) {
    throw ValidationError("checkpoint holds the '" + std::string(to_string(config.variant)) +
                          "' variant but '" + std::string(to_string(*expected)) + "' was requested");
  }

  Checkpoint ck;
  ck.model = Model::create(config, std::move(vocab));
  ck.model.extractor.slope = slopes[0];
  ck.model.mvsa.low_slope = slopes[1];
  ck.model.mvsa.high_slope = slopes[2];
  ck.metadata = manifest.value("metadata", nlohmann::json::object());

  std::size_t k = 0;
  detail::for_each_parameter(ck.model, [&](const std::string& name, Tensor& t) {
    if (k >= listed.size() || listed[k] != name) {
      throw FormatError("checkpoint is missing tensor '" + name + "'");
    }
    Tensor loaded = read_tensor(is);
    if (loaded.shape() != t.shape()) {
      throw FormatError("checkpoint tensor '" + name + "' has shape " + detail::shape_str(loaded.shape()) +
                        ", expected " + detail::shape_str(t.shape()));
    }
    t = std::move(loaded);
    ++k;
  });
  if (k != listed.size()) throw FormatError("checkpoint lists unexpected extra tensors");
  return ck;
}

inline Checkpoint load_checkpoint(const std::string& path, std::optional<VgaVariant> expected = std::nullopt) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read checkpoint " + path);
  return load_checkpoint(is, expected);
}

}  // namespace amfmn
