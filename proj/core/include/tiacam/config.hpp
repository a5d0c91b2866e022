#pragma once

#include <cstdint>
#include <string>

#include "tiacam/discriminator.hpp"
#include "tiacam/features.hpp"
#include "tiacam/trainer.hpp"
#include "tiacam/watermark.hpp"

namespace tiacam {

/// Every knob a run reads, one UTF-8 JSON object with sections "train",
/// "extractor", "discriminator", "data", "probe", and "watermark". Missing
/// keys take the desk-scale defaults below; unknown keys are config errors
/// so typos cannot silently fall back.
struct RunConfig {
  TrainConfig train;
  ExtractorConfig extractor;
  DiscriminatorConfig disc;

  // data section
  int side = 32;  // images resample to side x side; compression tiles 8x8
  int channels = 3;
  int kernel_size = 3;
  int backbone_hidden = 48;
  int backbone_dim = 64;
  uint64_t backbone_seed = 99;

  // probe section: the fixed multi-scale encoder behind the fidelity loss
  int probe_dim = 16;
  uint64_t probe_seed = 60;

  // watermark section (the codebook penalty reuses train.lambda_c)
  int wm_d = 64;
  double wm_eta = 0.1;
  int wm_steps = 5000;

  /// Cross-field checks: dimension ties, positive extents, 8-aligned side.
  void validate() const;

  /// Registration settings under this config with the given stream seed.
  RegisterConfig register_config(uint64_t seed) const;
};

RunConfig parse_config(const std::string& json_text);
RunConfig load_config(const std::string& path);

/// Canonical form: every field explicit, keys sorted, compact. Equal configs
/// produce byte-equal strings.
std::string canonical_json(const RunConfig& cfg);

/// FNV-1a 64 over canonical_json, the stamp embedded in checkpoints and
/// reports.
uint64_t config_hash(const RunConfig& cfg);

}  // namespace tiacam
