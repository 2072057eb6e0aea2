#pragma once

#include <cstddef>
#include <string>

#include <nlohmann/json.hpp>

#include "lgpt/common.hpp"

namespace lgpt {

enum class Variant { kMha, kMla, kMlaRope };

inline std::string variant_name(Variant v) {
  switch (v) {
    case Variant::kMha: return "mha";
    case Variant::kMla: return "mla";
    case Variant::kMlaRope: return "mla_rope";
  }
  throw ConfigError("unknown attention variant");
}

inline Variant variant_from_string(const std::string& s) {
  if (s == "mha") return Variant::kMha;
  if (s == "mla") return Variant::kMla;
  if (s == "mla_rope" || s == "mla+rope") return Variant::kMlaRope;
  throw ConfigError("unknown attention variant '" + s +
                    "' (expected mha | mla | mla_rope)");
}

// Architectural record for one model. heads == 0 picks d/64 (64-wide heads);
// latent == 0 picks the full head dimension (no compression).
struct ModelConfig {
  std::size_t layers = 6;
  std::size_t hidden = 256;
  std::size_t heads = 0;
  std::size_t latent = 0;
  Variant variant = Variant::kMha;
  std::size_t vocab = 50257;
  std::size_t context = 512;
  double dropout = 0.1;
  bool tied_output = true;

  ModelConfig normalized() const {
    ModelConfig c = *this;
    if (c.heads == 0) c.heads = c.hidden >= 64 ? c.hidden / 64 : 1;
    if (c.latent == 0 && c.heads != 0 && c.hidden % c.heads == 0)
      c.latent = c.hidden / c.heads;
    return c;
  }

  std::size_t head_dim() const { return heads ? hidden / heads : 0; }

  void validate() const {
    if (hidden == 0 || heads == 0)
      throw ConfigError("config: hidden and heads must be positive");
    if (hidden % heads != 0)
      throw ConfigError("config: hidden " + std::to_string(hidden) +
                        " not divisible by heads " + std::to_string(heads));
    if (latent == 0 || latent > head_dim())
      throw ConfigError("config: latent rank " + std::to_string(latent) +
                        " must be in [1, " + std::to_string(head_dim()) + "]");
    if (vocab == 0) throw ConfigError("config: vocab must be positive");
    if (context < 1) throw ConfigError("config: context must be >= 1");
    if (dropout < 0.0 || dropout >= 1.0)
      throw ConfigError("config: dropout must be in [0,1)");
  }
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"layers", c.layers},
                     {"hidden", c.hidden},
                     {"heads", c.heads},
                     {"latent", c.latent},
                     {"variant", variant_name(c.variant)},
                     {"vocab", c.vocab},
                     {"context", c.context},
                     {"dropout", c.dropout},
                     {"tied_output", c.tied_output}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  c = ModelConfig{};
  if (j.contains("layers")) j.at("layers").get_to(c.layers);
  if (j.contains("hidden")) j.at("hidden").get_to(c.hidden);
  if (j.contains("heads")) j.at("heads").get_to(c.heads);
  if (j.contains("latent")) j.at("latent").get_to(c.latent);
  if (j.contains("variant")) c.variant = variant_from_string(j.at("variant"));
  if (j.contains("vocab")) j.at("vocab").get_to(c.vocab);
  if (j.contains("context")) j.at("context").get_to(c.context);
  if (j.contains("dropout")) j.at("dropout").get_to(c.dropout);
  if (j.contains("tied_output")) j.at("tied_output").get_to(c.tied_output);
}

}  // namespace lgpt
