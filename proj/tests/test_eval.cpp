#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <string>
#include <vector>

#include "doctest.h"
#include "tiacam/error.hpp"
#include "tiacam/evalsuite.hpp"
#include "tiacam/serialize.hpp"

using namespace tiacam;

namespace {

// In-memory fixture: a tiny frozen pipeline over 16x16 RGB images (16 keeps
// the 8x8 compression tiling valid) and a hand-built labeled dataset.
struct EvalWorld {
  ProjectionBackbone backbone;
  Rng init_rng;  // declared before extractor: member init order feeds it in
  InvariantExtractor extractor;
  Dataset ds;

  explicit EvalWorld(int classes = 4, int images = 8, uint64_t seed = 12)
      : backbone(16, 16, 3, 24, 12, 99),
        init_rng(seed + 1),
        extractor(ext_cfg(), init_rng) {
    ds.side = 16;
    Rng rng(seed);
    for (int i = 0; i < images; ++i) {
      Tensor img({16, 16, 3});
      for (double& v : img.vec()) v = rng.uniform();
      ds.ids.push_back("img_" + std::to_string(i));
      ds.images.push_back(img);
      ds.labels.push_back(i % classes);
    }
    ds.anchors.names.reserve(size_t(classes));
    ds.anchors.E = Tensor({classes, 10});
    for (int c = 0; c < classes; ++c) {
      ds.anchors.names.push_back("class_" + std::to_string(c));
    }
    for (double& v : ds.anchors.E.vec()) v = rng.normal();
  }

  static ExtractorConfig ext_cfg() {
    ExtractorConfig ec;
    ec.in_dim = 12;
    ec.hidden = 16;
    ec.proj_hidden = 8;
    ec.out_dim = 10;
    ec.blocks = 1;
    ec.dropout = 0.1;
    return ec;
  }
  EvalPipeline pipe() { return {&backbone, &extractor}; }
};

RegisterConfig quick_reg() {
  RegisterConfig rc;
  rc.d = 8;
  rc.eta = 0.1;
  rc.steps = 4000;
  return rc;
}

}  // namespace

TEST_CASE("report serialization is deterministic and schema-checked") {
  EvalReport r;
  r.name = "demo";
  r.config_hash = 0xabcdef;
  r.seed = 7;
  r.notes.push_back("a note");
  r.columns = {"k", "v"};
  r.rows = {{"a", "1.5"}, {"b", "-2"}};

  std::string csv = report_to_csv(r);
  CHECK(csv ==
        "# report=demo config_hash=0000000000abcdef seed=7\n"
        "# a note\n"
        "k,v\n"
        "a,1.5\n"
        "b,-2\n");
  CHECK(report_to_csv(r) == csv);  // stable across calls

  r.rows.push_back({"only_one_cell"});
  CHECK_THROWS_AS(report_to_csv(r), DataError);

  SUBCASE("svg emitter renders one bar per row") {
    r.rows.pop_back();
    std::string svg = report_to_svg(r, 0, 1);
    CHECK(svg.find("<svg") != std::string::npos);
    CHECK(svg.find(">a<") != std::string::npos);
    CHECK(svg.find("1.5") != std::string::npos);
    // Negative values pick the second fill.
    CHECK(svg.find("#b5544d") != std::string::npos);
    CHECK(report_to_svg(r, 0, 1) == svg);
    CHECK_THROWS_AS(report_to_svg(r, 0, 5), ConfigError);
  }
}

TEST_CASE("metric formatting is fixed-width-stable") {
  CHECK(format_metric(1.0) == "1");
  CHECK(format_metric(0.5) == "0.5");
  CHECK(format_metric(-0.25) == "-0.25");
  CHECK(format_metric(1.0 / 3.0) == "0.3333333333");
}

TEST_CASE("profile list is identity plus the manual profiles") {
  auto p = eval_profiles();
  REQUIRE(p.size() == 8);
  CHECK(p.front() == "identity");
  CHECK(p.back() == "all");
  CHECK(std::find(p.begin(), p.end(), "jpeg") != p.end());
  CHECK(std::find(p.begin(), p.end(), "moire") != p.end());
}

TEST_CASE("invariance: identity and zero severity give cosine 1") {
  EvalWorld w;
  auto cells = invariance_cells(w.pipe(), w.ds, {"identity"}, 0.7, 6, 5);
  REQUIRE(cells.size() == 1);
  CHECK(cells[0].mean_cos == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(cells[0].count == 6);

  // Severity budget 0 collapses every profile onto the identity.
  for (const auto& c :
       invariance_cells(w.pipe(), w.ds, eval_profiles(), 0.0, 4, 5)) {
    CHECK(c.mean_cos == doctest::Approx(1.0).epsilon(1e-5));
  }
}

TEST_CASE("invariance: fixed seed reproduces the table, distortion moves it") {
  EvalWorld w;
  EvalPipeline pipe = w.pipe();
  uint64_t h0 = extractor_hash(w.extractor);

  EvalReport a = eval_invariance(pipe, w.ds, 0.6, 5, 21, 0x11);
  EvalReport b = eval_invariance(pipe, w.ds, 0.6, 5, 21, 0x11);
  CHECK(report_to_csv(a) == report_to_csv(b));

  EvalReport c = eval_invariance(pipe, w.ds, 0.6, 5, 22, 0x11);
  CHECK(report_to_csv(a) != report_to_csv(c));

  // Row order is the fixed profile order and the distorted rows sit below 1.
  REQUIRE(a.rows.size() == 8);
  CHECK(a.rows[0][0] == "identity");
  double all_cos = std::strtod(a.rows[7][2].c_str(), nullptr);
  CHECK(all_cos < 1.0);
  CHECK(all_cos > -1.0);

  // Read-only contract: evaluating did not move the extractor.
  CHECK(extractor_hash(w.extractor) == h0);
}

TEST_CASE("pair separation: identical positives, class guard") {
  EvalWorld w;
  Separation s = pair_separation(w.pipe(), w.ds, 0.0, 8, 3);
  CHECK(s.positive == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(s.negative < 1.0);
  CHECK(s.count == 8);

  // The metric underneath negatives: a feature against its negation is -1.
  Tensor f({1, 6}, {0.3, -1.2, 0.5, 2.0, -0.1, 0.7});
  CHECK(cosine_rows(f, neg(f)).vec()[0] == doctest::Approx(-1.0).epsilon(1e-12));

  EvalWorld single(1, 6);
  CHECK_THROWS_WITH_AS(pair_separation(single.pipe(), single.ds, 0.3, 4, 3),
                       doctest::Contains("two classes"), DataError);
}

TEST_CASE("bit accuracy: clean extraction is exact, reruns are identical") {
  EvalWorld w(2, 4);
  EvalPipeline pipe = w.pipe();
  uint64_t h0 = extractor_hash(w.extractor);

  auto cells = bits_cells(pipe, w.ds, {12}, {"identity"}, 0.5, 3, quick_reg(),
                          9, 0xabc);
  REQUIRE(cells.size() == 1);
  CHECK(cells[0].k == 12);
  CHECK(cells[0].count == 3);
  CHECK(cells[0].failures == 0);
  CHECK(cells[0].mean_accuracy == 1.0);

  EvalReport a = eval_bits(pipe, w.ds, {12}, 0.5, 3, quick_reg(), 9, 0x1,
                           0xabc);
  EvalReport b = eval_bits(pipe, w.ds, {12}, 0.5, 3, quick_reg(), 9, 0x1,
                           0xabc);
  CHECK(report_to_csv(a) == report_to_csv(b));
  REQUIRE(a.rows.size() == 8);
  CHECK(a.columns.back() == "reg_failures");

  CHECK(extractor_hash(w.extractor) == h0);
}

TEST_CASE("bit accuracy: registration failures are counted, never dropped") {
  EvalWorld w(2, 4);
  RegisterConfig hopeless = quick_reg();
  hopeless.steps = 1;
  hopeless.eta = 1e-9;
  auto cells = bits_cells(w.pipe(), w.ds, {12}, {"identity"}, 0.5, 3,
                          hopeless, 9, 0xabc);
  REQUIRE(cells.size() == 1);
  CHECK(cells[0].failures == 3);
  CHECK(cells[0].count == 0);
  CHECK(cells[0].mean_accuracy == 0.0);
}

TEST_CASE("ablation: identical checkpoints give zero deltas with counts") {
  EvalWorld w;
  TrainConfig budget;
  budget.rounds = 4;
  EvalPipeline pipe = w.pipe();

  EvalReport r = eval_ablation_augmentor(pipe, budget, pipe, budget, w.ds,
                                         0.5, 3, 10, quick_reg(), 13, 0x2,
                                         0xaa, 0xaa);
  REQUIRE(r.rows.size() == 7);  // manual profiles incl. "all"
  auto col = [&](const std::string& name) {
    auto it = std::find(r.columns.begin(), r.columns.end(), name);
    REQUIRE(it != r.columns.end());
    return size_t(it - r.columns.begin());
  };
  for (const auto& row : r.rows) {
    CHECK(row[col("d_cos")] == "0");
    CHECK(row[col("d_bits")] == "0");
    CHECK(row[col("higher_cos")] == "tie");
    CHECK(row[col("higher_bits")] == "tie");
    CHECK(row[col("n_cos")] == "3");
  }

  TrainConfig other = budget;
  other.rounds = 5;
  CHECK_THROWS_WITH_AS(
      eval_ablation_augmentor(pipe, budget, pipe, other, w.ds, 0.5, 3, 10,
                              quick_reg(), 13, 0x2, 0xaa, 0xaa),
      doctest::Contains("budget"), ConfigError);
}

TEST_CASE("linear probe: separable features reach top1 = 1") {
  // One-hot class indicator features are linearly separable by definition.
  int classes = 4, per = 6;
  int n = classes * per;
  Tensor f({n, classes});
  std::vector<int> y;
  for (int i = 0; i < n; ++i) {
    int c = i % classes;
    f.vec()[size_t(i) * classes + c] = 1.0;
    y.push_back(c);
  }
  ProbeResult res = linear_probe_features(f, y, f, y, classes, 200, 0.5);
  CHECK(res.top1 == 1.0);
  CHECK(res.top5 == 1.0);
  CHECK(res.top5_padded);  // 4 classes < 5
  CHECK(res.classes == 4);
}

TEST_CASE("linear probe: random labels land near chance") {
  Rng rng(77);
  int classes = 4, n_train = 120, n_test = 200, dim = 8;
  Tensor ftr({n_train, dim}), fte({n_test, dim});
  for (double& v : ftr.vec()) v = rng.normal();
  for (double& v : fte.vec()) v = rng.normal();
  std::vector<int> ytr, yte;
  for (int i = 0; i < n_train; ++i) ytr.push_back(rng.uniform_int(classes));
  for (int i = 0; i < n_test; ++i) yte.push_back(rng.uniform_int(classes));

  ProbeResult res = linear_probe_features(ftr, ytr, fte, yte, classes, 150,
                                          0.3);
  // Chance is 0.25; allow a generous Monte-Carlo band.
  CHECK(res.top1 > 0.10);
  CHECK(res.top1 < 0.45);
}

TEST_CASE("linear probe: validation guards") {
  Tensor f({2, 3});
  std::vector<int> y{0, 1};
  CHECK_THROWS_AS(linear_probe_features(f, y, f, y, 1, 10, 0.1), ConfigError);
  CHECK_THROWS_AS(linear_probe_features(f, y, f, y, 2, 0, 0.1), ConfigError);
  CHECK_THROWS_AS(linear_probe_features(f, y, f, y, 2, 10, 0.0), ConfigError);
  std::vector<int> bad{0, 7};
  CHECK_THROWS_AS(linear_probe_features(f, bad, f, y, 2, 10, 0.1), DataError);
  std::vector<int> short_y{0};
  CHECK_THROWS_AS(linear_probe_features(f, short_y, f, y, 2, 10, 0.1),
                  DataError);
}

TEST_CASE("probe over a dataset splits, distorts, and stays frozen") {
  EvalWorld w(4, 16);
  uint64_t h0 = extractor_hash(w.extractor);
  ProbeResult res = probe_dataset(w.pipe(), w.ds, 0.75, 0.3, 60, 0.3, 5);
  CHECK(res.classes == 4);
  CHECK(res.top5 == 1.0);
  CHECK(res.top5_padded);
  CHECK(res.top1 >= 0.0);
  CHECK(res.top1 <= 1.0);
  CHECK(extractor_hash(w.extractor) == h0);

  EvalReport r = linear_probe(w.pipe(), w.ds, 0.75, 0.3, 60, 0.3, 5, 0x9);
  REQUIRE(r.rows.size() == 2);
  CHECK(r.rows[0][0] == "top1");
  CHECK(r.rows[1][1] == "1");  // padded top5
  REQUIRE(!r.notes.empty());
  CHECK(r.notes[0].find("fewer than 5 classes") != std::string::npos);

  CHECK_THROWS_AS(probe_dataset(w.pipe(), w.ds, 0.0, 0.3, 60, 0.3, 5),
                  ConfigError);
  EvalWorld single(1, 6);
  CHECK_THROWS_AS(probe_dataset(single.pipe(), single.ds, 0.75, 0.3, 10, 0.3,
                                5),
                  DataError);
}
