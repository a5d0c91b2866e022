#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tiacam/dataset.hpp"
#include "tiacam/features.hpp"
#include "tiacam/trainer.hpp"
#include "tiacam/watermark.hpp"

namespace tiacam {

/// The frozen embedding path every evaluation scores: backbone encoding
/// followed by the extractor in eval mode. Evaluations read through this and
/// never mutate the models behind it.
struct EvalPipeline {
  BackboneProvider* backbone = nullptr;
  InvariantExtractor* extractor = nullptr;

  Tensor embed(const Tensor& image) const;  // {1, out_dim}
};

/// A finished table: metadata, optional comment notes, and preformatted
/// cells. Serialization is deterministic, so rerunning with the same config
/// hash and seed reproduces the file byte for byte.
struct EvalReport {
  std::string name;
  uint64_t config_hash = 0;
  uint64_t seed = 0;
  std::vector<std::string> notes;
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;
};

/// Fixed-width numeric cell formatting shared by every report.
std::string format_metric(double v);

std::string report_to_csv(const EvalReport& r);
void write_report_csv(const std::string& path, const EvalReport& r);

/// Horizontal bar chart of one numeric column against its row labels.
std::string report_to_svg(const EvalReport& r, int label_col, int value_col);
void write_report_svg(const std::string& path, const EvalReport& r,
                      int label_col, int value_col);

/// "identity" followed by the manual distortion profiles (ending in "all").
std::vector<std::string> eval_profiles();

// --- invariance ------------------------------------------------------------

struct InvarianceCell {
  std::string profile;
  double mean_cos = 0;
  int count = 0;
};

/// Mean cosine between invariant features of each image and a distorted
/// copy, n samples per profile cycling through the dataset. Severities are
/// drawn per image from U(0, severity); "identity" applies no distortion.
std::vector<InvarianceCell> invariance_cells(
    const EvalPipeline& pipe, const Dataset& ds,
    const std::vector<std::string>& profiles, double severity, int n,
    uint64_t seed);

EvalReport eval_invariance(const EvalPipeline& pipe, const Dataset& ds,
                           double severity, int n, uint64_t seed,
                           uint64_t config_hash);

// --- positive / negative separation -----------------------------------------

struct Separation {
  double positive = 0;  // mean cos(F(x), F(distort(x)))
  double negative = 0;  // mean cos(F(x), F(y)) with y from another class
  int count = 0;
};

/// Needs at least two distinct labels to draw negatives.
Separation pair_separation(const EvalPipeline& pipe, const Dataset& ds,
                           double severity, int n, uint64_t seed);

EvalReport eval_pair_separation(const EvalPipeline& pipe, const Dataset& ds,
                                double severity, int n, uint64_t seed,
                                uint64_t config_hash);

// --- watermark bit accuracy --------------------------------------------------

struct BitsCell {
  std::string profile;
  int k = 0;
  double mean_accuracy = 0;  // over successfully registered signatures
  int count = 0;             // extractions entering the mean
  int failures = 0;          // registrations that did not converge
};

/// Registers one random k-bit message per sample on the clean feature, then
/// extracts from the distorted image per profile. Registration failures are
/// counted per cell, never silently dropped.
std::vector<BitsCell> bits_cells(const EvalPipeline& pipe, const Dataset& ds,
                                 const std::vector<int>& ks,
                                 const std::vector<std::string>& profiles,
                                 double severity, int n,
                                 const RegisterConfig& reg, uint64_t seed,
                                 uint64_t pipeline_hash);

EvalReport eval_bits(const EvalPipeline& pipe, const Dataset& ds,
                     const std::vector<int>& ks, double severity, int n,
                     const RegisterConfig& reg, uint64_t seed,
                     uint64_t config_hash, uint64_t pipeline_hash);

// --- learned vs manual augmentor ablation ------------------------------------

/// Side-by-side invariance and bit-accuracy rows per profile. The two
/// checkpoints must come from runs with identical budgets (rounds, batch,
/// per-phase step counts, lr); a mismatch is a config error. Matching seeds
/// on both sides make identical checkpoints produce all-zero deltas.
EvalReport eval_ablation_augmentor(
    const EvalPipeline& learned, const TrainConfig& learned_budget,
    const EvalPipeline& manual, const TrainConfig& manual_budget,
    const Dataset& ds, double severity, int n, int k,
    const RegisterConfig& reg, uint64_t seed, uint64_t config_hash,
    uint64_t learned_hash, uint64_t manual_hash);

// --- linear probe -------------------------------------------------------------

struct ProbeResult {
  double top1 = 0;
  double top5 = 0;
  int classes = 0;
  bool top5_padded = false;  // fewer than 5 classes: top5 pinned to 1.0
};

/// Full-batch softmax regression on fixed feature rows; returns test-split
/// accuracy. Exposed so callers can probe any feature matrix directly.
ProbeResult linear_probe_features(const Tensor& train_f,
                                  const std::vector<int>& train_y,
                                  const Tensor& test_f,
                                  const std::vector<int>& test_y, int classes,
                                  int epochs, double lr);

/// Shuffles the dataset, embeds clean features for the train split and
/// distorted ones ("all" at U(0, severity)) for the test split, then fits
/// the probe. The pipeline stays frozen throughout.
ProbeResult probe_dataset(const EvalPipeline& pipe, const Dataset& ds,
                          double train_frac, double severity, int epochs,
                          double lr, uint64_t seed);

EvalReport linear_probe(const EvalPipeline& pipe, const Dataset& ds,
                        double train_frac, double severity, int epochs,
                        double lr, uint64_t seed, uint64_t config_hash);

}  // namespace tiacam
