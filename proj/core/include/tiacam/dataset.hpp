#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "tiacam/features.hpp"
#include "tiacam/rng.hpp"
#include "tiacam/tensor.hpp"

namespace tiacam {

/// Embedding rows keyed by id, the contents of a .tiac bundle. File order is
/// preserved so round trips are byte-stable.
struct EmbeddingBundle {
  int dim = 0;
  std::vector<std::string> ids;
  std::vector<std::vector<double>> rows;  // aligned with ids, each dim long

  int count() const { return int(ids.size()); }
  std::unordered_map<std::string, std::vector<double>> as_map() const;
};

/// Bundle file layout: magic "TIAC", u32 version=1, u32 count, u32 dim, then
/// count records of (u32 id length, UTF-8 id, dim little-endian f32).
EmbeddingBundle read_bundle(const std::string& path);
void write_bundle(const std::string& path, const EmbeddingBundle& b);

/// Pairing table: UTF-8 TSV lines `image_id<TAB>anchor_id`, blank lines
/// skipped. Malformed lines throw DataError with the line number.
std::vector<std::pair<std::string, std::string>> read_pairing(
    const std::string& path);
void write_pairing(
    const std::string& path,
    const std::vector<std::pair<std::string, std::string>>& rows);

/// A loaded corpus: images in [0,1] at a common square side, one anchor per
/// image (which doubles as its class label), and the anchor embeddings.
struct Dataset {
  int side = 0;
  std::vector<std::string> ids;  // manifest order, unique
  std::vector<Tensor> images;    // aligned with ids, each {side, side, 3}
  std::vector<int> labels;       // anchor row per image
  AnchorSet anchors;

  int count() const { return int(ids.size()); }
  int classes() const { return anchors.count(); }
  int index_of(const std::string& id) const;  // DataError when unknown
};

/// Reads dir/manifest.json: {"images": [{"id","file"}...], "anchors": path,
/// "pairing": path}, paths relative to dir. Images load as [0,1] tensors and
/// are bilinearly resized to side x side. Every image must pair with a known
/// anchor id; unknown ids are named in the error.
Dataset ingest(const std::string& dir, int side,
               const std::string& manifest_name = "manifest.json");

/// Writes the corpus back out as PPM files plus manifest, pairing table, and
/// anchor bundle, so ingest(dump_dataset(ingest(dir))) is value-identical
/// when no resampling happened.
void dump_dataset(const std::string& dir, const Dataset& ds);

struct SyntheticConfig {
  int count = 64;
  int classes = 4;  // at most 4 distinct shapes
  int side = 32;
  int anchor_dim = 16;
  uint64_t seed = 0;
};

/// Renders one colored shape per class (disc, square, triangle, cross) over
/// textured backgrounds and writes a complete ingestible directory: PPMs,
/// manifest.json, pairing.tsv, and anchors.tiac with one frozen Gaussian
/// anchor per class. Returns the image ids.
std::vector<std::string> gen_synthetic(const std::string& dir,
                                       const SyntheticConfig& cfg);

}  // namespace tiacam
