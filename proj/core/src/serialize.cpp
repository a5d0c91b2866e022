#include "tiacam/serialize.hpp"

#include <cstdio>
#include <iterator>
#include <map>
#include <utility>
#include <vector>

#include "binio.hpp"
#include "tiacam/error.hpp"

namespace tiacam {

namespace {

constexpr uint32_t kVersion = 1;

using NamedTensors = std::vector<std::pair<std::string, Tensor*>>;

void put_tensors(binio::Writer& w, const NamedTensors& list) {
  w.u32(uint32_t(list.size()));
  for (const auto& [name, t] : list) {
    w.str(name);
    w.u32(uint32_t(t->rank()));
    for (int d : t->shape()) w.u32(uint32_t(d));
    for (double v : t->vec()) w.f64(v);
  }
}

void get_tensors(binio::Reader& r, const NamedTensors& expect) {
  uint32_t n = r.u32("tensor count");
  if (n != expect.size()) {
    throw DataError(r.origin + " holds " + std::to_string(n) +
                    " tensors where the state has " +
                    std::to_string(expect.size()));
  }
  for (const auto& [name, t] : expect) {
    std::string got = r.str("tensor name");
    if (got != name) {
      throw DataError(r.origin + " holds tensor '" + got +
                      "' where the state expects '" + name + "'");
    }
    uint32_t rank = r.u32("tensor rank");
    Shape dims(rank);
    for (uint32_t i = 0; i < rank; ++i) dims[i] = int(r.u32("tensor extent"));
    if (dims != t->shape()) {
      throw DataError(r.origin + " tensor '" + name +
                      "' does not match the state's shape");
    }
    for (double& v : t->vec()) v = r.f64("tensor value");
  }
}

void put_optimizer(binio::Writer& w, const Adam& opt) {
  w.u64(uint64_t(opt.steps()));
  w.u32(uint32_t(opt.slots().size()));
  for (const auto& [name, slot] : opt.slots()) {
    w.str(name);
    w.u32(uint32_t(slot.m.size()));
    for (double v : slot.m) w.f64(v);
    for (double v : slot.v) w.f64(v);
  }
}

void get_optimizer(binio::Reader& r, Adam& opt) {
  opt.set_steps(int64_t(r.u64("optimizer steps")));
  opt.slots().clear();
  uint32_t n = r.u32("moment count");
  for (uint32_t i = 0; i < n; ++i) {
    std::string name = r.str("moment name");
    uint32_t len = r.u32("moment length");
    Adam::Slot slot;
    slot.m.resize(len);
    slot.v.resize(len);
    for (double& v : slot.m) v = r.f64("first moment");
    for (double& v : slot.v) v = r.f64("second moment");
    opt.slots().emplace(std::move(name), std::move(slot));
  }
}

void put_section(binio::Writer& out, const std::string& name,
                 const binio::Writer& payload) {
  out.str(name);
  out.u64(payload.buf.size());
  out.raw(payload.buf.data(), payload.buf.size());
}

}  // namespace

void save_checkpoint(const std::string& path, const TrainState& st,
                     uint64_t config_hash) {
  // Section payloads read the state through its named-tensor views, which
  // need a mutable reference; nothing below writes into it.
  TrainState& s = const_cast<TrainState&>(st);

  binio::Writer out;
  out.raw("TICP", 4);
  out.u32(kVersion);
  out.u64(config_hash);
  out.u64(uint64_t(s.round));
  out.u64(uint64_t(s.step));

  binio::Writer ext, stats, aug, disc, od, of, oa, rng;
  put_tensors(ext, s.extractor.parameters());
  put_tensors(stats, s.extractor.buffers());
  put_tensors(aug, s.aug.all_tensors());
  aug.f64(s.aug.moire_phase_lo);
  aug.f64(s.aug.moire_phase_hi);
  aug.f64(s.aug.comp_table_scale);
  aug.u8(s.aug.comp_enabled ? 1 : 0);
  put_tensors(disc, s.disc.parameters());
  put_optimizer(od, s.opt_disc);
  put_optimizer(of, s.opt_feat);
  put_optimizer(oa, s.opt_aug);
  rng.str(s.rng.serialize());

  const std::pair<const char*, binio::Writer*> sections[] = {
      {"extractor", &ext},      {"extractor_stats", &stats},
      {"augmentor", &aug},      {"discriminator", &disc},
      {"opt_disc", &od},        {"opt_feat", &of},
      {"opt_aug", &oa},         {"rng", &rng},
  };
  out.u32(uint32_t(std::size(sections)));
  for (const auto& [name, payload] : sections) {
    put_section(out, name, *payload);
  }
  binio::write_file(path, out.buf);
}

namespace {

struct CheckpointHead {
  uint64_t config_hash = 0;
  uint64_t round = 0;
  uint64_t step = 0;
  std::map<std::string, binio::Reader> sections;
};

CheckpointHead read_checkpoint_file(const std::string& path) {
  binio::Reader r = binio::read_file(path);
  r.need(4, "magic");
  if (std::string(r.bytes.begin(), r.bytes.begin() + 4) != "TICP") {
    throw DataError(path + " is not a checkpoint file (bad magic)");
  }
  r.off = 4;
  uint32_t version = r.u32("version");
  if (version != kVersion) {
    throw DataError(path + " has unsupported checkpoint version " +
                    std::to_string(version));
  }
  CheckpointHead head;
  head.config_hash = r.u64("config hash");
  head.round = r.u64("round");
  head.step = r.u64("step");
  uint32_t n = r.u32("section count");
  for (uint32_t i = 0; i < n; ++i) {
    std::string name = r.str("section name");
    uint64_t len = r.u64("section length");
    r.need(len, "section payload");
    binio::Reader sec;
    sec.bytes.assign(r.bytes.begin() + long(r.off),
                     r.bytes.begin() + long(r.off + len));
    sec.origin = path + " section " + name;
    r.off += len;
    if (!head.sections.emplace(std::move(name), std::move(sec)).second) {
      throw DataError(path + " holds a duplicate section");
    }
  }
  return head;
}

binio::Reader& section(CheckpointHead& head, const std::string& name,
                       const std::string& path) {
  auto it = head.sections.find(name);
  if (it == head.sections.end()) {
    throw DataError(path + " is missing section " + name);
  }
  return it->second;
}

}  // namespace

uint64_t load_checkpoint(const std::string& path, TrainState& st,
                         uint64_t expected_config_hash) {
  CheckpointHead head = read_checkpoint_file(path);
  if (expected_config_hash != 0 && head.config_hash != expected_config_hash) {
    char msg[160];
    std::snprintf(msg, sizeof(msg),
                  "checkpoint %s was written under config hash %016llx, not "
                  "the supplied %016llx",
                  path.c_str(),
                  static_cast<unsigned long long>(head.config_hash),
                  static_cast<unsigned long long>(expected_config_hash));
    throw ConfigError(msg);
  }

  get_tensors(section(head, "extractor", path), st.extractor.parameters());
  get_tensors(section(head, "extractor_stats", path), st.extractor.buffers());
  binio::Reader& aug = section(head, "augmentor", path);
  get_tensors(aug, st.aug.all_tensors());
  st.aug.moire_phase_lo = aug.f64("moire phase lo");
  st.aug.moire_phase_hi = aug.f64("moire phase hi");
  st.aug.comp_table_scale = aug.f64("quant table scale");
  st.aug.comp_enabled = aug.u8("compression flag") != 0;
  get_tensors(section(head, "discriminator", path), st.disc.parameters());
  get_optimizer(section(head, "opt_disc", path), st.opt_disc);
  get_optimizer(section(head, "opt_feat", path), st.opt_feat);
  get_optimizer(section(head, "opt_aug", path), st.opt_aug);
  st.rng.deserialize(section(head, "rng", path).str("rng state"));
  st.round = int64_t(head.round);
  st.step = int64_t(head.step);
  return head.config_hash;
}

uint64_t peek_checkpoint_hash(const std::string& path) {
  return read_checkpoint_file(path).config_hash;
}

uint64_t extractor_hash(InvariantExtractor& m) {
  uint64_t h = binio::kFnvSeed;
  auto absorb = [&h](const NamedTensors& list) {
    for (const auto& [name, t] : list) {
      h = binio::fnv1a64(name.data(), name.size(), h);
      for (int d : t->shape()) {
        uint32_t u = uint32_t(d);
        h = binio::fnv1a64(&u, 4, h);
      }
      h = binio::fnv1a64(t->vec().data(), t->vec().size() * sizeof(double), h);
    }
  };
  absorb(m.parameters());
  absorb(m.buffers());
  return h;
}

}  // namespace tiacam
