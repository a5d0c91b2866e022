#include "tiacam/config.hpp"

#include <fstream>
#include <iterator>

#include <json.hpp>

#include "binio.hpp"
#include "tiacam/error.hpp"

namespace tiacam {

namespace {

using nlohmann::json;

// Pulls key out of obj with a type check; leftovers after all pulls are
// unknown keys.
template <typename T>
void take(json& obj, const std::string& section, const char* key, T& out) {
  auto it = obj.find(key);
  if (it == obj.end()) return;
  try {
    out = it->get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config key " + section + "." + key +
                      " has the wrong type");
  }
  obj.erase(it);
}

json take_section(json& doc, const char* name) {
  auto it = doc.find(name);
  if (it == doc.end()) return json::object();
  if (!it->is_object()) {
    throw ConfigError(std::string("config section \"") + name +
                      "\" must be an object");
  }
  json sec = *it;
  doc.erase(it);
  return sec;
}

void reject_leftovers(const json& obj, const std::string& section) {
  if (obj.empty()) return;
  throw ConfigError("unknown config key " + section + "." +
                    obj.begin().key());
}

}  // namespace

void RunConfig::validate() const {
  train.validate();
  if (extractor.in_dim < 1 || extractor.hidden < 1 ||
      extractor.proj_hidden < 1 || extractor.out_dim < 1) {
    throw ConfigError("extractor widths must be positive");
  }
  if (extractor.blocks < 1) {
    throw ConfigError("the extractor needs at least one residual block");
  }
  if (extractor.dropout < 0 || extractor.dropout >= 1) {
    throw ConfigError("dropout must lie in [0,1)");
  }
  if (extractor.in_dim != backbone_dim) {
    throw ConfigError("extractor.in_dim must equal data.backbone_dim (got " +
                      std::to_string(extractor.in_dim) + " vs " +
                      std::to_string(backbone_dim) + ")");
  }
  if (disc.feature_dim != extractor.out_dim) {
    throw ConfigError(
        "discriminator.feature_dim must equal extractor.out_dim (got " +
        std::to_string(disc.feature_dim) + " vs " +
        std::to_string(extractor.out_dim) + ")");
  }
  if (side < 8 || side % 8 != 0) {
    throw ConfigError("data.side must be a positive multiple of 8, the "
                      "compression tile size");
  }
  if (channels != 1 && channels != 3) {
    throw ConfigError("data.channels must be 1 or 3");
  }
  if (kernel_size < 1 || kernel_size % 2 == 0) {
    throw ConfigError("data.kernel_size must be odd and positive");
  }
  if (backbone_hidden < 1 || backbone_dim < 1) {
    throw ConfigError("backbone widths must be positive");
  }
  if (probe_dim < 1) throw ConfigError("probe.dim must be positive");
  if (wm_d < 1) throw ConfigError("watermark.d must be positive");
  if (wm_eta <= 0) throw ConfigError("watermark.eta must be positive");
  if (wm_steps < 1) throw ConfigError("watermark.steps must be positive");
}

RegisterConfig RunConfig::register_config(uint64_t seed) const {
  RegisterConfig rc;
  rc.d = wm_d;
  rc.lambda_c = train.lambda_c;
  rc.eta = wm_eta;
  rc.steps = wm_steps;
  rc.seed = seed;
  return rc;
}

RunConfig parse_config(const std::string& json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw ConfigError("config must be a JSON object");

  RunConfig cfg;

  json t = take_section(doc, "train");
  take(t, "train", "lr", cfg.train.lr);
  take(t, "train", "lambda_adv", cfg.train.lambda_adv);
  take(t, "train", "lambda_sem", cfg.train.lambda_sem);
  take(t, "train", "lambda_c", cfg.train.lambda_c);
  take(t, "train", "batch", cfg.train.batch);
  take(t, "train", "n_disc", cfg.train.n_disc);
  take(t, "train", "n_aug", cfg.train.n_aug);
  take(t, "train", "n_feat", cfg.train.n_feat);
  take(t, "train", "rounds", cfg.train.rounds);
  take(t, "train", "seed", cfg.train.seed);
  take(t, "train", "extractor_uses_inv", cfg.train.extractor_uses_inv);
  take(t, "train", "checkpoint_every", cfg.train.checkpoint_every);
  take(t, "train", "augmentor_learned", cfg.train.augmentor_learned);
  take(t, "train", "manual_severity", cfg.train.manual_severity);
  reject_leftovers(t, "train");

  json e = take_section(doc, "extractor");
  take(e, "extractor", "in_dim", cfg.extractor.in_dim);
  take(e, "extractor", "hidden", cfg.extractor.hidden);
  take(e, "extractor", "proj_hidden", cfg.extractor.proj_hidden);
  take(e, "extractor", "out_dim", cfg.extractor.out_dim);
  take(e, "extractor", "blocks", cfg.extractor.blocks);
  take(e, "extractor", "dropout", cfg.extractor.dropout);
  take(e, "extractor", "normalize_output", cfg.extractor.normalize_output);
  reject_leftovers(e, "extractor");

  json d = take_section(doc, "discriminator");
  take(d, "discriminator", "feature_dim", cfg.disc.feature_dim);
  take(d, "discriminator", "hidden", cfg.disc.hidden);
  take(d, "discriminator", "layers", cfg.disc.layers);
  take(d, "discriminator", "heads", cfg.disc.heads);
  take(d, "discriminator", "ff_hidden", cfg.disc.ff_hidden);
  reject_leftovers(d, "discriminator");

  json da = take_section(doc, "data");
  take(da, "data", "side", cfg.side);
  take(da, "data", "channels", cfg.channels);
  take(da, "data", "kernel_size", cfg.kernel_size);
  take(da, "data", "backbone_hidden", cfg.backbone_hidden);
  take(da, "data", "backbone_dim", cfg.backbone_dim);
  take(da, "data", "backbone_seed", cfg.backbone_seed);
  reject_leftovers(da, "data");

  json p = take_section(doc, "probe");
  take(p, "probe", "dim", cfg.probe_dim);
  take(p, "probe", "seed", cfg.probe_seed);
  reject_leftovers(p, "probe");

  json w = take_section(doc, "watermark");
  take(w, "watermark", "d", cfg.wm_d);
  take(w, "watermark", "eta", cfg.wm_eta);
  take(w, "watermark", "steps", cfg.wm_steps);
  reject_leftovers(w, "watermark");

  if (!doc.empty()) {
    throw ConfigError("unknown config section \"" + doc.begin().key() + "\"");
  }

  cfg.validate();
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file " + path);
  std::string text{std::istreambuf_iterator<char>(is),
                   std::istreambuf_iterator<char>()};
  try {
    return parse_config(text);
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

std::string canonical_json(const RunConfig& cfg) {
  json doc;
  doc["train"] = {{"lr", cfg.train.lr},
                  {"lambda_adv", cfg.train.lambda_adv},
                  {"lambda_sem", cfg.train.lambda_sem},
                  {"lambda_c", cfg.train.lambda_c},
                  {"batch", cfg.train.batch},
                  {"n_disc", cfg.train.n_disc},
                  {"n_aug", cfg.train.n_aug},
                  {"n_feat", cfg.train.n_feat},
                  {"rounds", cfg.train.rounds},
                  {"seed", cfg.train.seed},
                  {"extractor_uses_inv", cfg.train.extractor_uses_inv},
                  {"checkpoint_every", cfg.train.checkpoint_every},
                  {"augmentor_learned", cfg.train.augmentor_learned},
                  {"manual_severity", cfg.train.manual_severity}};
  doc["extractor"] = {{"in_dim", cfg.extractor.in_dim},
                      {"hidden", cfg.extractor.hidden},
                      {"proj_hidden", cfg.extractor.proj_hidden},
                      {"out_dim", cfg.extractor.out_dim},
                      {"blocks", cfg.extractor.blocks},
                      {"dropout", cfg.extractor.dropout},
                      {"normalize_output", cfg.extractor.normalize_output}};
  doc["discriminator"] = {{"feature_dim", cfg.disc.feature_dim},
                          {"hidden", cfg.disc.hidden},
                          {"layers", cfg.disc.layers},
                          {"heads", cfg.disc.heads},
                          {"ff_hidden", cfg.disc.ff_hidden}};
  doc["data"] = {{"side", cfg.side},
                 {"channels", cfg.channels},
                 {"kernel_size", cfg.kernel_size},
                 {"backbone_hidden", cfg.backbone_hidden},
                 {"backbone_dim", cfg.backbone_dim},
                 {"backbone_seed", cfg.backbone_seed}};
  doc["probe"] = {{"dim", cfg.probe_dim}, {"seed", cfg.probe_seed}};
  doc["watermark"] =
      {{"d", cfg.wm_d}, {"eta", cfg.wm_eta}, {"steps", cfg.wm_steps}};
  return doc.dump();
}

uint64_t config_hash(const RunConfig& cfg) {
  std::string s = canonical_json(cfg);
  return binio::fnv1a64(s.data(), s.size());
}

}  // namespace tiacam
