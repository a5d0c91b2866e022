#include "tiacam/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include <json.hpp>

#include "binio.hpp"
#include "tiacam/error.hpp"
#include "tiacam/image_io.hpp"

namespace fs = std::filesystem;

namespace tiacam {

std::unordered_map<std::string, std::vector<double>> EmbeddingBundle::as_map()
    const {
  std::unordered_map<std::string, std::vector<double>> m;
  m.reserve(ids.size());
  for (size_t i = 0; i < ids.size(); ++i) m.emplace(ids[i], rows[i]);
  return m;
}

EmbeddingBundle read_bundle(const std::string& path) {
  binio::Reader r = binio::read_file(path);
  r.need(4, "magic");
  if (std::string(r.bytes.begin(), r.bytes.begin() + 4) != "TIAC") {
    throw DataError(path + " is not an embedding bundle (bad magic)");
  }
  r.off = 4;
  uint32_t version = r.u32("version");
  if (version != 1) {
    throw DataError(path + " has unsupported bundle version " +
                    std::to_string(version));
  }
  uint32_t count = r.u32("count");
  uint32_t dim = r.u32("dim");
  if (dim == 0) throw DataError(path + " declares a zero embedding width");

  EmbeddingBundle b;
  b.dim = int(dim);
  std::set<std::string> seen;
  for (uint32_t i = 0; i < count; ++i) {
    std::string id = r.str("record id");
    if (id.empty()) throw DataError(path + " holds an empty record id");
    if (!seen.insert(id).second) {
      throw DataError(path + " holds duplicate id '" + id + "'");
    }
    std::vector<double> row(dim);
    for (uint32_t j = 0; j < dim; ++j) row[j] = r.f32("embedding value");
    b.ids.push_back(std::move(id));
    b.rows.push_back(std::move(row));
  }
  return b;
}

void write_bundle(const std::string& path, const EmbeddingBundle& b) {
  if (b.ids.size() != b.rows.size()) {
    throw DataError("bundle ids and rows differ in length");
  }
  if (b.dim <= 0) throw ConfigError("bundle embedding width must be positive");
  binio::Writer w;
  w.raw("TIAC", 4);
  w.u32(1);
  w.u32(uint32_t(b.ids.size()));
  w.u32(uint32_t(b.dim));
  for (size_t i = 0; i < b.ids.size(); ++i) {
    if (int(b.rows[i].size()) != b.dim) {
      throw DataError("bundle row for '" + b.ids[i] +
                      "' does not match the declared width");
    }
    w.str(b.ids[i]);
    for (double v : b.rows[i]) w.f32(float(v));
  }
  binio::write_file(path, w.buf);
}

std::vector<std::pair<std::string, std::string>> read_pairing(
    const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open pairing table " + path);
  std::vector<std::pair<std::string, std::string>> rows;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    size_t tab = line.find('\t');
    if (tab == std::string::npos || tab == 0 || tab + 1 == line.size()) {
      throw DataError(path + " line " + std::to_string(lineno) +
                      " is not `image_id<TAB>anchor_id`");
    }
    rows.emplace_back(line.substr(0, tab), line.substr(tab + 1));
  }
  return rows;
}

void write_pairing(
    const std::string& path,
    const std::vector<std::pair<std::string, std::string>>& rows) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write pairing table " + path);
  for (const auto& [img, anchor] : rows) os << img << "\t" << anchor << "\n";
  if (!os.flush()) throw DataError("failed writing pairing table " + path);
}

int Dataset::index_of(const std::string& id) const {
  auto it = std::find(ids.begin(), ids.end(), id);
  if (it == ids.end()) throw DataError("unknown image id '" + id + "'");
  return int(it - ids.begin());
}

Dataset ingest(const std::string& dir, int side,
               const std::string& manifest_name) {
  if (side <= 0) throw ConfigError("image side must be positive");
  fs::path root(dir);
  fs::path manifest_path = root / manifest_name;
  std::ifstream is(manifest_path);
  if (!is) throw DataError("cannot open manifest " + manifest_path.string());

  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("manifest " + manifest_path.string() +
                    " is not valid JSON: " + e.what());
  }
  if (!doc.is_object() || !doc.contains("images") ||
      !doc["images"].is_array()) {
    throw DataError("manifest " + manifest_path.string() +
                    " needs an \"images\" list");
  }
  for (const char* key : {"anchors", "pairing"}) {
    if (!doc.contains(key) || !doc[key].is_string()) {
      throw DataError("manifest " + manifest_path.string() +
                      " needs a \"" + key + "\" path");
    }
  }

  Dataset ds;
  ds.side = side;
  std::set<std::string> seen;
  for (const auto& entry : doc["images"]) {
    if (!entry.is_object() || !entry.contains("id") ||
        !entry.contains("file") || !entry["id"].is_string() ||
        !entry["file"].is_string()) {
      throw DataError("manifest image entries need string \"id\" and "
                      "\"file\" fields");
    }
    std::string id = entry["id"];
    if (!seen.insert(id).second) {
      throw DataError("manifest lists image id '" + id + "' twice");
    }
    Tensor img = read_ppm((root / entry["file"].get<std::string>()).string());
    ds.ids.push_back(id);
    ds.images.push_back(resize_bilinear(img, side, side));
  }
  if (ds.ids.empty()) throw DataError("manifest lists no images");

  EmbeddingBundle bundle =
      read_bundle((root / doc["anchors"].get<std::string>()).string());
  if (bundle.count() == 0) throw DataError("anchor bundle is empty");
  ds.anchors.names = bundle.ids;
  ds.anchors.E = Tensor({bundle.count(), bundle.dim});
  for (int i = 0; i < bundle.count(); ++i) {
    std::copy(bundle.rows[i].begin(), bundle.rows[i].end(),
              ds.anchors.E.vec().begin() + size_t(i) * bundle.dim);
  }

  auto pairing =
      read_pairing((root / doc["pairing"].get<std::string>()).string());
  std::unordered_map<std::string, int> anchor_index;
  for (int i = 0; i < bundle.count(); ++i) anchor_index[bundle.ids[i]] = i;
  std::unordered_map<std::string, int> image_index;
  for (int i = 0; i < ds.count(); ++i) image_index[ds.ids[i]] = i;

  ds.labels.assign(ds.count(), -1);
  for (const auto& [img_id, anchor_id] : pairing) {
    auto img_it = image_index.find(img_id);
    if (img_it == image_index.end()) {
      throw DataError("pairing table names unknown image id '" + img_id + "'");
    }
    auto anc_it = anchor_index.find(anchor_id);
    if (anc_it == anchor_index.end()) {
      throw DataError("pairing table names unknown anchor id '" + anchor_id +
                      "'");
    }
    ds.labels[img_it->second] = anc_it->second;
  }
  for (int i = 0; i < ds.count(); ++i) {
    if (ds.labels[i] < 0) {
      throw DataError("image '" + ds.ids[i] + "' has no pairing entry");
    }
  }
  return ds;
}

void dump_dataset(const std::string& dir, const Dataset& ds) {
  fs::path root(dir);
  fs::create_directories(root);

  nlohmann::json doc;
  doc["anchors"] = "anchors.tiac";
  doc["pairing"] = "pairing.tsv";
  doc["images"] = nlohmann::json::array();
  std::vector<std::pair<std::string, std::string>> pairing;
  for (int i = 0; i < ds.count(); ++i) {
    std::string file = ds.ids[i] + ".ppm";
    write_ppm((root / file).string(), ds.images[i]);
    doc["images"].push_back({{"id", ds.ids[i]}, {"file", file}});
    pairing.emplace_back(ds.ids[i], ds.anchors.names[ds.labels[i]]);
  }

  EmbeddingBundle b;
  b.dim = ds.anchors.dim();
  b.ids = ds.anchors.names;
  for (int i = 0; i < ds.anchors.count(); ++i) {
    const double* row = ds.anchors.E.vec().data() + size_t(i) * b.dim;
    b.rows.emplace_back(row, row + b.dim);
  }
  write_bundle((root / "anchors.tiac").string(), b);
  write_pairing((root / "pairing.tsv").string(), pairing);

  std::ofstream os(root / "manifest.json");
  if (!os) throw DataError("cannot write manifest in " + dir);
  os << doc.dump(2) << "\n";
  if (!os.flush()) throw DataError("failed writing manifest in " + dir);
}

namespace {

// Signed distance style inside-tests for the four shape classes. Coordinates
// are in [0,1] relative to the shape center and radius.
bool inside_shape(int cls, double dx, double dy) {
  switch (cls) {
    case 0:  // disc
      return dx * dx + dy * dy <= 1.0;
    case 1:  // square
      return std::max(std::abs(dx), std::abs(dy)) <= 0.82;
    case 2:  // upward triangle
      return dy >= -0.75 && std::abs(dx) <= 0.55 * (1.0 - (dy + 0.75) / 1.6);
    default:  // cross
      return std::abs(dx) <= 0.32 || std::abs(dy) <= 0.32;
  }
}

}  // namespace

std::vector<std::string> gen_synthetic(const std::string& dir,
                                       const SyntheticConfig& cfg) {
  if (cfg.count < 1) throw ConfigError("synthetic image count must be >= 1");
  if (cfg.classes < 1 || cfg.classes > 4) {
    throw ConfigError("synthetic class count must lie in [1,4]");
  }
  if (cfg.side < 8) throw ConfigError("synthetic side must be >= 8");
  if (cfg.anchor_dim < 1) {
    throw ConfigError("anchor embedding width must be >= 1");
  }

  fs::path root(dir);
  fs::create_directories(root);
  Rng rng(cfg.seed);

  Dataset ds;
  ds.side = cfg.side;
  for (int i = 0; i < cfg.count; ++i) {
    int cls = i % cfg.classes;
    Tensor img({cfg.side, cfg.side, 3});
    std::vector<double>& v = img.vec();

    // Textured background: a random two-tone gradient plus sinusoidal weave.
    double base[3], tilt[3];
    for (int c = 0; c < 3; ++c) {
      base[c] = rng.uniform(0.15, 0.5);
      tilt[c] = rng.uniform(-0.2, 0.2);
    }
    double wfx = rng.uniform(2.0, 6.0), wfy = rng.uniform(2.0, 6.0);
    double wph = rng.uniform(0.0, 6.283185307179586);

    // Shape placement and a class-independent random color.
    double cx = rng.uniform(0.3, 0.7) * cfg.side;
    double cy = rng.uniform(0.3, 0.7) * cfg.side;
    double radius = rng.uniform(0.18, 0.3) * cfg.side;
    double col[3];
    for (int c = 0; c < 3; ++c) col[c] = rng.uniform(0.55, 1.0);

    for (int y = 0; y < cfg.side; ++y) {
      for (int x = 0; x < cfg.side; ++x) {
        double u = double(x) / cfg.side, t = double(y) / cfg.side;
        double weave =
            0.06 * std::sin(6.283185307179586 * (wfx * u + wfy * t) + wph);
        bool in = inside_shape(cls, (x - cx) / radius, (y - cy) / radius);
        for (int c = 0; c < 3; ++c) {
          double val = in ? col[c]
                          : base[c] + tilt[c] * (u + t) + weave +
                                0.03 * rng.uniform(-1.0, 1.0);
          v[(size_t(y) * cfg.side + x) * 3 + c] =
              std::clamp(val, 0.0, 1.0);
        }
      }
    }

    char name[32];
    std::snprintf(name, sizeof(name), "img_%03d", i);
    ds.ids.push_back(name);
    ds.images.push_back(std::move(img));
    ds.labels.push_back(cls);
  }

  ds.anchors.names.reserve(cfg.classes);
  ds.anchors.E = Tensor({cfg.classes, cfg.anchor_dim});
  Rng anchor_rng(cfg.seed + 1);
  for (int c = 0; c < cfg.classes; ++c) {
    ds.anchors.names.push_back("class_" + std::to_string(c));
    for (int j = 0; j < cfg.anchor_dim; ++j) {
      ds.anchors.E.vec()[size_t(c) * cfg.anchor_dim + j] = anchor_rng.normal();
    }
  }

  dump_dataset(dir, ds);
  return ds.ids;
}

}  // namespace tiacam
