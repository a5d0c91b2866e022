#include "tiacam/watermark.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "tiacam/error.hpp"
#include "tiacam/optim.hpp"

namespace tiacam {
namespace {

int hex_digit(char c) {
  if (c >= '0' && c <= '9') return c - '0';
  if (c >= 'a' && c <= 'f') return c - 'a' + 10;
  if (c >= 'A' && c <= 'F') return c - 'A' + 10;
  return -1;
}

void check_bits(const Message& m, const char* who) {
  if (m.k() < 1) throw DataError(std::string(who) + ": message is empty");
  for (int b : m.bits) {
    if (b != 0 && b != 1) {
      throw DataError(std::string(who) + ": bit value " + std::to_string(b) +
                      " outside {0,1}");
    }
  }
}

// Spatial mean of an {H,W,C} map as a {1,C} row; matrices pass through.
Tensor pool_feature(const Tensor& F) {
  if (F.shape().size() == 2) return F;
  if (F.shape().size() == 3) {
    int h = int(F.shape()[0]), w = int(F.shape()[1]), c = int(F.shape()[2]);
    Tensor cols = transpose(reshape(F, {h * w, c}));  // {C, H*W}
    return mul_scalar(reshape(sum_cols(cols), {1, c}), 1.0 / (h * w));
  }
  throw DataError("feature must be a {N,D} matrix or an {H,W,C} map, got " +
                  shape_str(F.shape()));
}

// Sum_i softplus(z_i) - w_i z_i equals the negative log-likelihood of the
// bits under sigmoid(z) without ever forming the probabilities.
Tensor bce_from_logits(const Tensor& z, const Tensor& w_row) {
  return sum(sub(softplus(z), mul(w_row, z)));
}

}  // namespace

Message random_message(int k, Rng& rng) {
  if (k < 1) throw ConfigError("message length must be positive");
  Message m;
  m.bits.reserve(k);
  for (int i = 0; i < k; ++i) m.bits.push_back(rng.uniform_int(2));
  return m;
}

Message message_from_hex(const std::string& hex, int k) {
  if (k < 1) throw ConfigError("message length must be positive");
  size_t want = size_t((k + 3) / 4);
  if (hex.size() != want) {
    throw DataError("hex message has " + std::to_string(hex.size()) +
                    " digits, expected " + std::to_string(want) + " for " +
                    std::to_string(k) + " bits");
  }
  Message m;
  m.bits.reserve(k);
  for (int i = 0; i < k; ++i) {
    int v = hex_digit(hex[i / 4]);
    if (v < 0) {
      throw DataError(std::string("invalid hex digit '") + hex[i / 4] +
                      "' in message");
    }
    m.bits.push_back((v >> (3 - i % 4)) & 1);
  }
  return m;
}

std::string message_to_hex(const Message& m) {
  check_bits(m, "message_to_hex");
  std::string out;
  for (int i = 0; i < m.k(); i += 4) {
    int v = 0;
    for (int j = 0; j < 4; ++j) {
      v <<= 1;
      if (i + j < m.k()) v |= m.bits[i + j];
    }
    out += "0123456789abcdef"[v];
  }
  return out;
}

double bit_accuracy(const Message& a, const Message& b) {
  if (a.k() != b.k()) {
    throw DataError("bit_accuracy: lengths differ (" + std::to_string(a.k()) +
                    " vs " + std::to_string(b.k()) + ")");
  }
  check_bits(a, "bit_accuracy");
  check_bits(b, "bit_accuracy");
  int same = 0;
  for (int i = 0; i < a.k(); ++i) same += a.bits[i] == b.bits[i];
  return double(same) / a.k();
}

Tensor encode_feature(const Tensor& psi, const Tensor& F) {
  if (psi.shape().size() != 2) {
    throw ConfigError("projection must be a {feat_dim,d} matrix, got " +
                      shape_str(psi.shape()));
  }
  Tensor g = pool_feature(F);
  if (g.shape()[1] != psi.shape()[0]) {
    throw DataError("feature dim " + std::to_string(g.shape()[1]) +
                    " does not match projection rows " +
                    std::to_string(psi.shape()[0]));
  }
  return matmul(g, psi);
}

Tensor predict_bits(const Tensor& C, const Tensor& f_tilde) {
  return sigmoid(matmul(f_tilde, transpose(C)));
}

WatermarkSignature register_signature(const Tensor& F, const Message& W,
                                      const RegisterConfig& cfg,
                                      const std::string& image_id,
                                      uint64_t checkpoint_hash) {
  check_bits(W, "register_signature");
  if (cfg.d < 1) throw ConfigError("code dimension must be positive");
  if (cfg.steps < 1) throw ConfigError("registration needs at least one step");
  if (!(cfg.eta > 0.0)) throw ConfigError("step size must be positive");
  if (cfg.lambda_c < 0.0) throw ConfigError("codebook penalty must be >= 0");

  Tensor g = pool_feature(F);
  if (g.shape()[0] != 1) {
    throw DataError("registration expects a single feature row, got " +
                    shape_str(g.shape()));
  }
  int feat_dim = int(g.shape()[1]);
  int k = W.k();

  Rng init(cfg.seed);
  auto gaussian = [&](Shape shape) {
    Tensor t(std::move(shape));
    for (double& v : t.vec()) v = init.normal() * 0.01;
    return t;
  };
  Tensor C = gaussian({k, cfg.d});
  Tensor psi = gaussian({feat_dim, cfg.d});
  auto overlay = [](Tensor& dst, const Tensor* src, const char* who) {
    if (!src) return;
    if (src->shape() != dst.shape()) {
      throw ConfigError(std::string(who) + " override has shape " +
                        shape_str(src->shape()) + ", expected " +
                        shape_str(dst.shape()));
    }
    dst = src->clone();
  };
  overlay(C, cfg.init_C, "codebook");
  overlay(psi, cfg.init_psi, "projection");

  Tensor w_row({1, k});
  for (int i = 0; i < k; ++i) w_row.vec()[i] = W.bits[i];

  auto clean_state = [&]() -> std::pair<double, bool> {
    Tensor z = matmul(matmul(g, psi), transpose(C));
    double bce = bce_from_logits(z, w_row).item();
    bool exact = true;
    for (int i = 0; i < k; ++i) {
      int bit = z.vec()[i] >= 0.0 ? 1 : 0;  // sigmoid(z) >= 0.5 iff z >= 0
      if (bit != W.bits[i]) exact = false;
    }
    return {bce, exact};
  };

  double bce = 0.0;
  int taken = 0;
  for (int step = 0; step < cfg.steps; ++step) {
    Tape tape;
    Tensor c_leaf = tape.leaf(C, true);
    Tensor p_leaf = tape.leaf(psi, true);
    Tensor z = matmul(matmul(g, p_leaf), transpose(c_leaf));
    Tensor total = add(bce_from_logits(z, w_row),
                       mul_scalar(sum(mul(c_leaf, c_leaf)), cfg.lambda_c));
    tape.backward(total);
    std::vector<Tensor> grads = {tape.grad(c_leaf), tape.grad(p_leaf)};
    sgd_step({{"C", &C}, {"psi", &psi}}, grads, cfg.eta);
    taken = step + 1;

    auto [post_bce, exact] = clean_state();
    bce = post_bce;
    if (cfg.bce_trace) cfg.bce_trace->push_back(post_bce);
    if (exact && post_bce < 0.05) {
      WatermarkSignature sig;
      sig.k = k;
      sig.d = cfg.d;
      sig.C = C;
      sig.psi = psi;
      sig.message = W;
      sig.meta = {image_id, cfg.seed, cfg.lambda_c, taken, checkpoint_hash};
      return sig;
    }
  }
  std::ostringstream msg;
  msg << "registration did not converge: binary cross-entropy " << bce
      << " after " << taken << " steps";
  throw ConvergenceError(msg.str());
}

Message extract_message(const WatermarkSignature& sig, const Tensor& F,
                        uint64_t pipeline_hash) {
  if (pipeline_hash != sig.meta.checkpoint_hash) {
    std::ostringstream msg;
    msg << "signature was registered against a different extractor "
           "checkpoint (hash "
        << std::hex << sig.meta.checkpoint_hash << " vs " << pipeline_hash
        << ")";
    throw DataError(msg.str());
  }
  std::vector<double> probs = bit_confidences(sig, F);
  Message out;
  out.bits.reserve(probs.size());
  for (double p : probs) out.bits.push_back(p >= 0.5 ? 1 : 0);
  return out;
}

std::vector<double> bit_confidences(const WatermarkSignature& sig,
                                    const Tensor& F) {
  Tensor probs = predict_bits(sig.C, encode_feature(sig.psi, F));
  if (probs.shape()[0] != 1) {
    throw DataError("extraction expects a single feature row, got " +
                    shape_str(F.shape()));
  }
  return probs.vec();
}

namespace {

void put_bytes(std::ostream& out, const void* p, size_t n) {
  out.write(static_cast<const char*>(p), std::streamsize(n));
}

void put_u32(std::ostream& out, uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = (v >> (8 * i)) & 0xff;
  put_bytes(out, b, 4);
}

void put_u64(std::ostream& out, uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = (v >> (8 * i)) & 0xff;
  put_bytes(out, b, 8);
}

void put_f64(std::ostream& out, double v) {
  uint64_t u;
  std::memcpy(&u, &v, 8);
  put_u64(out, u);
}

void put_f32_tensor(std::ostream& out, const Tensor& t) {
  for (double v : t.vec()) {
    float f = float(v);
    uint32_t u;
    std::memcpy(&u, &f, 4);
    put_u32(out, u);
  }
}

struct SigReader {
  std::ifstream in;
  size_t off = 0;
  explicit SigReader(const std::string& path) : in(path, std::ios::binary) {
    if (!in) throw DataError("cannot open signature file " + path);
  }
  void take(void* p, size_t n, const char* what) {
    in.read(static_cast<char*>(p), std::streamsize(n));
    if (size_t(in.gcount()) != n) {
      throw DataError("signature file truncated at byte " +
                      std::to_string(off) + " reading " + what);
    }
    off += n;
  }
  uint32_t u32(const char* what) {
    unsigned char b[4];
    take(b, 4, what);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= uint32_t(b[i]) << (8 * i);
    return v;
  }
  uint64_t u64(const char* what) {
    unsigned char b[8];
    take(b, 8, what);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= uint64_t(b[i]) << (8 * i);
    return v;
  }
  double f64(const char* what) {
    uint64_t u = u64(what);
    double v;
    std::memcpy(&v, &u, 8);
    return v;
  }
  Tensor f32_tensor(Shape shape, const char* what) {
    Tensor t(std::move(shape));
    for (double& v : t.vec()) {
      uint32_t u = u32(what);
      float f;
      std::memcpy(&f, &u, 4);
      v = f;
    }
    return t;
  }
};

constexpr uint32_t kSigVersion = 1;

}  // namespace

void write_signature(const std::string& path, const WatermarkSignature& sig) {
  if (sig.k < 1 || sig.d < 1 || sig.C.shape() != Shape{sig.k, sig.d} ||
      sig.psi.shape().size() != 2 || sig.psi.shape()[1] != sig.d ||
      sig.message.k() != sig.k) {
    throw DataError("signature is internally inconsistent, refusing to write");
  }
  for (double v : sig.C.vec()) {
    if (!std::isfinite(v)) throw DataError("signature codebook is not finite");
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write signature file " + path);
  put_bytes(out, "TIWM", 4);
  put_u32(out, kSigVersion);
  put_u32(out, uint32_t(sig.k));
  put_u32(out, uint32_t(sig.d));
  put_u32(out, uint32_t(sig.psi.shape()[0]));
  put_f32_tensor(out, sig.C);
  put_f32_tensor(out, sig.psi);
  put_u32(out, uint32_t(sig.meta.image_id.size()));
  put_bytes(out, sig.meta.image_id.data(), sig.meta.image_id.size());
  put_u64(out, sig.meta.seed);
  put_f64(out, sig.meta.lambda_c);
  put_u32(out, uint32_t(sig.meta.steps));
  put_u64(out, sig.meta.checkpoint_hash);
  for (int b : sig.message.bits) {
    unsigned char byte = (unsigned char)(b);
    put_bytes(out, &byte, 1);
  }
  if (!out) throw DataError("write failed for signature file " + path);
}

WatermarkSignature read_signature(const std::string& path) {
  SigReader r(path);
  char magic[4];
  r.take(magic, 4, "magic");
  if (std::memcmp(magic, "TIWM", 4) != 0) {
    throw DataError(path + " is not a signature file (bad magic)");
  }
  uint32_t version = r.u32("version");
  if (version != kSigVersion) {
    throw DataError("unsupported signature version " +
                    std::to_string(version));
  }
  uint32_t k = r.u32("bit count");
  uint32_t d = r.u32("code dimension");
  uint32_t feat = r.u32("feature dimension");
  if (k < 1 || d < 1 || feat < 1) {
    throw DataError("signature header has a zero dimension");
  }
  WatermarkSignature sig;
  sig.k = int(k);
  sig.d = int(d);
  sig.C = r.f32_tensor({int(k), int(d)}, "codebook");
  sig.psi = r.f32_tensor({int(feat), int(d)}, "projection");
  uint32_t idlen = r.u32("image id length");
  sig.meta.image_id.resize(idlen);
  if (idlen > 0) r.take(sig.meta.image_id.data(), idlen, "image id");
  sig.meta.seed = r.u64("seed");
  sig.meta.lambda_c = r.f64("lambda_c");
  sig.meta.steps = int(r.u32("step count"));
  sig.meta.checkpoint_hash = r.u64("checkpoint hash");
  sig.message.bits.resize(k);
  for (uint32_t i = 0; i < k; ++i) {
    unsigned char byte;
    r.take(&byte, 1, "message bits");
    if (byte > 1) {
      throw DataError("message bit " + std::to_string(i) + " has value " +
                      std::to_string(int(byte)));
    }
    sig.message.bits[i] = byte;
  }
  return sig;
}

}  // namespace tiacam
