#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <vector>

#include "doctest.h"
#include "tiacam/error.hpp"
#include "tiacam/watermark.hpp"

using namespace tiacam;

namespace {

Tensor random_row(int d, Rng& rng) {
  Tensor t({1, d});
  for (double& v : t.vec()) v = rng.normal();
  return t;
}

Tensor gaussian(Shape shape, double std, Rng& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.vec()) v = rng.normal() * std;
  return t;
}

double stable_sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  double e = std::exp(z);
  return e / (1.0 + e);
}

double stable_softplus(double z) {
  return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z)));
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), std::streamsize(bytes.size()));
}

}  // namespace

TEST_CASE("message helpers") {
  SUBCASE("random messages are binary and roughly balanced") {
    Rng rng(1);
    Message m = random_message(1000, rng);
    REQUIRE(m.k() == 1000);
    double mean = 0;
    for (int b : m.bits) {
      CHECK((b == 0 || b == 1));
      mean += b;
    }
    mean /= m.k();
    CHECK(mean > 0.4);
    CHECK(mean < 0.6);
    CHECK_THROWS_AS(random_message(0, rng), ConfigError);
  }

  SUBCASE("hex round trip, most significant nibble first") {
    Message m = message_from_hex("a", 4);
    CHECK(m.bits == std::vector<int>{1, 0, 1, 0});
    Message n = message_from_hex("f3", 8);
    CHECK(n.bits == std::vector<int>{1, 1, 1, 1, 0, 0, 1, 1});
    CHECK(message_to_hex(n) == "f3");

    Rng rng(2);
    Message r = random_message(30, rng);
    CHECK(message_from_hex(message_to_hex(r), 30) == r);

    CHECK_THROWS_AS(message_from_hex("ab", 4), DataError);   // surplus digit
    CHECK_THROWS_AS(message_from_hex("a", 8), DataError);    // missing digit
    CHECK_THROWS_AS(message_from_hex("g", 4), DataError);    // not hex
  }

  SUBCASE("bit accuracy") {
    Message a{{1, 0, 1, 1, 0}};
    CHECK(bit_accuracy(a, a) == 1.0);
    Message b = a;
    for (int& v : b.bits) v = 1 - v;
    CHECK(bit_accuracy(a, b) == 0.0);

    Rng rng(3);
    Message w = random_message(30, rng);
    Message f = w;
    for (int i : {2, 11, 27}) f.bits[i] = 1 - f.bits[i];
    CHECK(bit_accuracy(w, f) == doctest::Approx(0.9).epsilon(1e-12));

    Message shorter{{1, 0}};
    CHECK_THROWS_AS(bit_accuracy(a, shorter), DataError);
  }
}

TEST_CASE("feature encoding") {
  Rng rng(4);

  SUBCASE("identity projection passes the row through exactly") {
    int d = 6;
    Tensor eye({d, d});
    for (int i = 0; i < d; ++i) eye.vec()[i * d + i] = 1.0;
    Tensor f = random_row(d, rng);
    Tensor out = encode_feature(eye, f);
    REQUIRE(out.shape() == Shape{1, d});
    for (int i = 0; i < d; ++i) CHECK(out.vec()[i] == f.vec()[i]);
  }

  SUBCASE("spatial mean of a constant map is the constant vector") {
    int c = 5;
    Tensor map({2, 2, c});
    for (int i = 0; i < map.size(); ++i) map.vec()[i] = 0.1 * (i % c) - 0.2;
    Tensor eye({c, c});
    for (int i = 0; i < c; ++i) eye.vec()[i * c + i] = 1.0;
    Tensor out = encode_feature(eye, map);
    REQUIRE(out.shape() == Shape{1, c});
    // 2x2 extent: the mean of four equal values divides by a power of two.
    for (int j = 0; j < c; ++j) CHECK(out.vec()[j] == map.vec()[j]);
  }

  SUBCASE("projection is linear in the feature") {
    Tensor psi = gaussian({7, 5}, 0.5, rng);
    Tensor f1 = random_row(7, rng);
    Tensor f2 = random_row(7, rng);
    double a = 1.7, b = -0.6;
    Tensor lhs = encode_feature(psi, add(mul_scalar(f1, a), mul_scalar(f2, b)));
    Tensor rhs = add(mul_scalar(encode_feature(psi, f1), a),
                     mul_scalar(encode_feature(psi, f2), b));
    for (int j = 0; j < 5; ++j) {
      CHECK(lhs.vec()[j] == doctest::Approx(rhs.vec()[j]).epsilon(1e-12));
    }
  }

  SUBCASE("shape errors") {
    Tensor psi = gaussian({5, 4}, 0.5, rng);
    CHECK_THROWS_AS(encode_feature(psi, random_row(6, rng)), DataError);
    Tensor bad({2, 2, 2, 2});
    CHECK_THROWS_AS(encode_feature(psi, bad), DataError);
    Tensor notmat({5});
    CHECK_THROWS_AS(encode_feature(notmat, random_row(5, rng)), ConfigError);
  }
}

TEST_CASE("bit prediction") {
  Rng rng(5);
  Tensor f = random_row(8, rng);

  SUBCASE("zero code row gives exactly one half") {
    Tensor C({3, 8});
    for (int j = 0; j < 8; ++j) C.vec()[1 * 8 + j] = rng.normal();
    Tensor p = predict_bits(C, f);
    REQUIRE(p.shape() == Shape{1, 3});
    CHECK(p.vec()[0] == 0.5);
    CHECK(p.vec()[2] == 0.5);
  }

  SUBCASE("code aligned at logit ten") {
    double n2 = 0;
    for (double v : f.vec()) n2 += v * v;
    Tensor C({1, 8});
    for (int j = 0; j < 8; ++j) C.vec()[j] = 10.0 * f.vec()[j] / n2;
    double p = predict_bits(C, f).vec()[0];
    CHECK(p == doctest::Approx(0.9999546021312976).epsilon(1e-9));

    for (int j = 0; j < 8; ++j) C.vec()[j] = -C.vec()[j];
    double q = predict_bits(C, f).vec()[0];
    CHECK(q == doctest::Approx(1.0 - p).epsilon(1e-12));
  }
}

TEST_CASE("one-dimensional registration follows the scalar descent oracle") {
  Tensor F({1, 1});
  F.vec()[0] = 1.0;
  Tensor C0({1, 1});
  Tensor psi0({1, 1});
  psi0.vec()[0] = 1.0;

  RegisterConfig cfg;
  cfg.d = 1;
  cfg.lambda_c = 0.0;
  cfg.eta = 0.5;
  cfg.steps = 400;
  cfg.init_C = &C0;
  cfg.init_psi = &psi0;
  std::vector<double> trace;
  cfg.bce_trace = &trace;

  Message W{{1}};
  WatermarkSignature sig = register_signature(F, W, cfg);

  // Scalar replica of the coupled (C, psi) recurrence.
  double c = 0.0, p = 1.0;
  std::vector<double> oracle_bce;
  for (int s = 0; s < sig.meta.steps; ++s) {
    double err = stable_sigmoid(c * p) - 1.0;
    double nc = c - cfg.eta * err * p;
    double np = p - cfg.eta * err * c;
    c = nc;
    p = np;
    oracle_bce.push_back(stable_softplus(c * p) - c * p);
  }
  CHECK(sig.C.vec()[0] == doctest::Approx(c).epsilon(1e-12));
  CHECK(sig.psi.vec()[0] == doctest::Approx(p).epsilon(1e-12));
  CHECK(sig.C.vec()[0] > 0.0);

  REQUIRE(trace.size() == oracle_bce.size());
  for (size_t i = 0; i < trace.size(); ++i) {
    CHECK(trace[i] == doctest::Approx(oracle_bce[i]).epsilon(1e-10));
    if (i > 0) CHECK(trace[i] < trace[i - 1]);
  }
  CHECK(trace.back() < 0.05);

  Message got = extract_message(sig, F, 0);
  CHECK(got == W);
}

TEST_CASE("overwhelming codebook penalty fails loudly") {
  Rng rng(6);
  Tensor F = random_row(8, rng);
  Message W = random_message(8, rng);
  RegisterConfig cfg;
  cfg.d = 4;
  cfg.lambda_c = 1e3;
  cfg.eta = 1e-4;
  cfg.steps = 200;
  cfg.seed = 9;
  try {
    register_signature(F, W, cfg);
    FAIL("registration should not converge under the penalty");
  } catch (const ConvergenceError& e) {
    std::string msg = e.what();
    CHECK(msg.find("registration did not converge") != std::string::npos);
    CHECK(msg.find("binary cross-entropy") != std::string::npos);
  }
}

TEST_CASE("register and extract round trip") {
  Rng rng(7);

  SUBCASE("ten random pairs at thirty bits") {
    for (int trial = 0; trial < 10; ++trial) {
      Tensor F = random_row(16, rng);
      Message W = random_message(30, rng);
      RegisterConfig cfg;
      cfg.d = 32;
      cfg.seed = 100 + trial;
      std::vector<double> fvec = F.vec();
      WatermarkSignature sig =
          register_signature(F, W, cfg, "img", 0xfeedULL);
      CHECK(F.vec() == fvec);  // registration never touches the feature
      CHECK(sig.message == W);
      CHECK(sig.meta.steps >= 1);
      Message got = extract_message(sig, F, 0xfeedULL);
      CHECK(bit_accuracy(W, got) == 1.0);
    }
  }

  SUBCASE("checkpoint hash mismatch refuses to extract") {
    Tensor F = random_row(10, rng);
    Message W = random_message(8, rng);
    RegisterConfig cfg;
    cfg.d = 8;
    WatermarkSignature sig = register_signature(F, W, cfg, "x", 42);
    CHECK_THROWS_WITH_AS(extract_message(sig, F, 43),
                         doctest::Contains("different extractor checkpoint"),
                         DataError);
  }

  SUBCASE("extraction is invariant to positive feature scaling") {
    Tensor F = random_row(12, rng);
    Message W = random_message(20, rng);
    RegisterConfig cfg;
    cfg.d = 16;
    WatermarkSignature sig = register_signature(F, W, cfg);
    Message a = extract_message(sig, F, 0);
    Message b = extract_message(sig, mul_scalar(F, 7.25), 0);
    Message c = extract_message(sig, mul_scalar(F, 0.003), 0);
    CHECK(a == b);
    CHECK(a == c);
  }

  SUBCASE("probability exactly one half extracts as bit one") {
    WatermarkSignature sig;
    sig.k = 2;
    sig.d = 3;
    sig.C = Tensor({2, 3});
    sig.C.vec()[3] = -5.0;  // second row pushes bit 1 toward zero
    sig.psi = Tensor({3, 3});
    for (int i = 0; i < 3; ++i) sig.psi.vec()[i * 3 + i] = 1.0;
    sig.message = Message{{1, 0}};
    Tensor F({1, 3});
    F.vec()[0] = 0.7;
    Message got = extract_message(sig, F, 0);
    CHECK(got.bits[0] == 1);  // zero logit, probability 0.5, thresholds to 1
    CHECK(got.bits[1] == 0);
    std::vector<double> conf = bit_confidences(sig, F);
    CHECK(conf[0] == 0.5);
    CHECK(conf[1] < 0.5);
  }
}

TEST_CASE("unregistered signatures read as chance") {
  Rng rng(8);
  Tensor F = random_row(16, rng);
  double total = 0;
  int trials = 50;
  for (int t = 0; t < trials; ++t) {
    WatermarkSignature sig;
    sig.k = 100;
    sig.d = 16;
    sig.C = gaussian({100, 16}, 0.01, rng);
    sig.psi = gaussian({16, 16}, 0.01, rng);
    sig.message = random_message(100, rng);
    total += bit_accuracy(sig.message, extract_message(sig, F, 0));
  }
  double mean = total / trials;
  CHECK(mean > 0.4);
  CHECK(mean < 0.6);
}

TEST_CASE("objective decreases monotonically at small step size") {
  // Halve the step size on a violation; a sufficiently small eta must give a
  // monotone trace on every tested pair.
  Rng rng(9);
  for (int pair = 0; pair < 3; ++pair) {
    Tensor F = random_row(12, rng);
    Message W = random_message(12, rng);
    double eta = 1e-2;
    bool monotone = false;
    for (int attempt = 0; attempt < 6 && !monotone; ++attempt, eta /= 2) {
      RegisterConfig cfg;
      cfg.d = 8;
      cfg.eta = eta;
      cfg.steps = 20000;
      cfg.seed = 33 + pair;
      std::vector<double> trace;
      cfg.bce_trace = &trace;
      try {
        register_signature(F, W, cfg);
      } catch (const ConvergenceError&) {
        // Step size too small to converge in budget; the trace still counts.
      }
      monotone = true;
      for (size_t i = 1; i < trace.size() && monotone; ++i) {
        if (trace[i] > trace[i - 1] + 1e-12) monotone = false;
      }
    }
    CHECK(monotone);
  }
}

TEST_CASE("signature file round trip and corruption handling") {
  Rng rng(10);
  Tensor F = random_row(6, rng);
  Message W = random_message(8, rng);
  RegisterConfig cfg;
  cfg.d = 8;
  cfg.seed = 5;
  cfg.lambda_c = 2e-4;
  WatermarkSignature sig = register_signature(F, W, cfg, "img-7", 0xabcdefULL);
  const char* path = "sig_roundtrip.tiwm";

  SUBCASE("round trip preserves everything that matters") {
    write_signature(path, sig);
    WatermarkSignature back = read_signature(path);
    CHECK(back.k == sig.k);
    CHECK(back.d == sig.d);
    CHECK(back.message == sig.message);
    CHECK(back.meta.image_id == "img-7");
    CHECK(back.meta.seed == 5);
    CHECK(back.meta.lambda_c == 2e-4);
    CHECK(back.meta.steps == sig.meta.steps);
    CHECK(back.meta.checkpoint_hash == 0xabcdefULL);
    for (int i = 0; i < sig.C.size(); ++i) {
      CHECK(back.C.vec()[i] ==
            doctest::Approx(sig.C.vec()[i]).epsilon(1e-6));
    }
    // Stored margins dwarf the f32 quantization error.
    Message got = extract_message(back, F, 0xabcdefULL);
    CHECK(bit_accuracy(W, got) == 1.0);
    std::remove(path);
  }

  SUBCASE("truncation reports the byte offset") {
    write_signature(path, sig);
    std::string bytes = slurp(path);
    spit(path, bytes.substr(0, 10));
    CHECK_THROWS_WITH_AS(read_signature(path),
                         doctest::Contains("truncated at byte"), DataError);
    std::remove(path);
  }

  SUBCASE("bad magic and bad version are rejected") {
    write_signature(path, sig);
    std::string bytes = slurp(path);
    std::string wrong = bytes;
    wrong[0] = 'X';
    spit(path, wrong);
    CHECK_THROWS_WITH_AS(read_signature(path), doctest::Contains("bad magic"),
                         DataError);
    wrong = bytes;
    wrong[4] = 9;  // version field, little endian
    spit(path, wrong);
    CHECK_THROWS_WITH_AS(read_signature(path),
                         doctest::Contains("unsupported signature version"),
                         DataError);
    std::remove(path);
  }

  SUBCASE("corrupt message bit is rejected") {
    write_signature(path, sig);
    std::string bytes = slurp(path);
    bytes[bytes.size() - 1] = 7;
    spit(path, bytes);
    CHECK_THROWS_WITH_AS(read_signature(path), doctest::Contains("has value 7"),
                         DataError);
    std::remove(path);
  }

  SUBCASE("missing file") {
    CHECK_THROWS_WITH_AS(read_signature("no_such_file.tiwm"),
                         doctest::Contains("cannot open"), DataError);
  }

  SUBCASE("inconsistent signature refuses to serialize") {
    WatermarkSignature broken = sig;
    broken.message.bits.pop_back();
    CHECK_THROWS_AS(write_signature(path, broken), DataError);
  }
}

TEST_CASE("registration config validation") {
  Rng rng(11);
  Tensor F = random_row(4, rng);
  Message W{{1, 0}};
  RegisterConfig cfg;
  cfg.d = 0;
  CHECK_THROWS_AS(register_signature(F, W, cfg), ConfigError);
  cfg = RegisterConfig{};
  cfg.steps = 0;
  CHECK_THROWS_AS(register_signature(F, W, cfg), ConfigError);
  cfg = RegisterConfig{};
  cfg.eta = 0.0;
  CHECK_THROWS_AS(register_signature(F, W, cfg), ConfigError);
  cfg = RegisterConfig{};
  cfg.lambda_c = -1.0;
  CHECK_THROWS_AS(register_signature(F, W, cfg), ConfigError);

  Message bad{{1, 2}};
  cfg = RegisterConfig{};
  CHECK_THROWS_AS(register_signature(F, bad, cfg), DataError);

  Tensor two_rows({2, 4});
  CHECK_THROWS_AS(register_signature(two_rows, W, cfg), DataError);

  Tensor c0({3, 3});
  cfg.init_C = &c0;  // wrong shape for k=2, d=64
  CHECK_THROWS_AS(register_signature(F, W, cfg), ConfigError);
}
