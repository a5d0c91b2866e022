#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tiacam/rng.hpp"
#include "tiacam/tensor.hpp"

namespace tiacam {

// A k-bit binary message bound to an image's feature signature.
struct Message {
  std::vector<int> bits;  // each 0 or 1
  int k() const { return int(bits.size()); }
  bool operator==(const Message&) const = default;
};

Message random_message(int k, Rng& rng);
// First k bits of the hex string, most significant nibble first; the string
// must hold exactly ceil(k/4) digits.
Message message_from_hex(const std::string& hex, int k);
// Inverse of message_from_hex; trailing pad bits in the last nibble are 0.
std::string message_to_hex(const Message& m);

// Fraction of matching bits; lengths must agree.
double bit_accuracy(const Message& a, const Message& b);

// Spatial mean over an {H,W,C} map (a {N,D} matrix passes through row-wise),
// then the linear projection psi {C,d}.
Tensor encode_feature(const Tensor& psi, const Tensor& F);

// Per-bit probabilities sigmoid(f_tilde . C_i), shape {N,k}.
Tensor predict_bits(const Tensor& C, const Tensor& f_tilde);

struct SignatureMeta {
  std::string image_id;
  uint64_t seed = 0;
  double lambda_c = 0.0;
  int steps = 0;  // gradient steps actually taken
  uint64_t checkpoint_hash = 0;
};

// Per image-message reference signature: codebook rows are directional codes
// for the bits, psi maps the frozen feature into code space.
struct WatermarkSignature {
  int k = 0;
  int d = 0;
  Tensor C;    // {k,d}
  Tensor psi;  // {feat_dim,d}
  Message message;  // registered bits; clean extraction reproduces them
  SignatureMeta meta;
};

struct RegisterConfig {
  int d = 64;
  double lambda_c = 1e-4;
  double eta = 0.1;
  int steps = 5000;
  uint64_t seed = 0;
  // Test hooks: explicit starting points instead of the seeded Gaussian, and
  // an optional per-step objective trace (binary cross-entropy after each
  // update).
  const Tensor* init_C = nullptr;
  const Tensor* init_psi = nullptr;
  std::vector<double>* bce_trace = nullptr;
};

// Gradient-descends BCE(W, sigmoid(F~ . C_i)) + lambda_c * |C|^2 over C and
// psi for this single pair. Succeeds once clean extraction matches W exactly
// and the BCE falls below 0.05; otherwise throws ConvergenceError carrying
// the final BCE. Never mutates F.
WatermarkSignature register_signature(const Tensor& F, const Message& W,
                                      const RegisterConfig& cfg,
                                      const std::string& image_id = "",
                                      uint64_t checkpoint_hash = 0);

// Thresholded extraction: bit i is 1 iff its probability >= 0.5. The caller's
// pipeline hash must match the hash recorded at registration.
Message extract_message(const WatermarkSignature& sig, const Tensor& F,
                        uint64_t pipeline_hash);

// The probabilities behind extract_message, for confidence reporting.
std::vector<double> bit_confidences(const WatermarkSignature& sig,
                                    const Tensor& F);

// Versioned binary signature file ("TIWM").
void write_signature(const std::string& path, const WatermarkSignature& sig);
WatermarkSignature read_signature(const std::string& path);

}  // namespace tiacam
