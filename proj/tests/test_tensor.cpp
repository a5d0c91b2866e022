#include <cmath>
#include <sstream>

#include "doctest.h"
#include "tiacam/tensor.hpp"

using namespace tiacam;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

}  // namespace

TEST_CASE("tensor basics") {
  Tensor t({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(t.size() == 6);
  CHECK(t.at(1, 2) == 6.0);
  Tensor c = t.clone();
  c.at(0, 0) = 99.0;
  CHECK(t.at(0, 0) == 1.0);
  CHECK_THROWS_AS(Tensor({2, 2}, {1.0}), EngineError);
  CHECK_THROWS_AS(t.item(), EngineError);
  CHECK(Tensor::scalar(4.5).item() == 4.5);
}

TEST_CASE("value anchors") {
  CHECK(sigmoid(Tensor::scalar(0.0)).item() == 0.5);
  // dct of all-zero input is all-zero
  Tensor z({8, 8, 1});
  Tensor d = dct2d(z);
  for (int64_t i = 0; i < d.size(); ++i) CHECK(d[i] == 0.0);
  // matmul with identity
  Tensor I({2, 2}, {1, 0, 0, 1});
  Tensor m({2, 2}, {3, 4, 5, 6});
  Tensor p = matmul(m, I);
  for (int64_t i = 0; i < 4; ++i) CHECK(p[i] == m[i]);
}

TEST_CASE("backward of sum is ones and fan-out accumulates") {
  Tape tape;
  Tensor x = tape.leaf(Tensor({3}, {1, 2, 3}));
  Tensor loss = sum(x);
  tape.backward(loss);
  Tensor g = tape.grad(x);
  for (int i = 0; i < 3; ++i) CHECK(g[i] == 1.0);

  // y used twice: gradients add
  Tape t2;
  Tensor y = t2.leaf(Tensor({1}, {3.0}));
  Tensor loss2 = sum(add(y, y));
  t2.backward(loss2);
  CHECK(t2.grad(y).item() == 2.0);
}

TEST_CASE("single-weight logistic gradient anchor") {
  // loss = sigmoid(w * 1) at w = 0 has d loss/d w = 0.25
  Tape tape;
  Tensor w = tape.leaf(Tensor::scalar(0.0));
  Tensor loss = sigmoid(w);
  tape.backward(loss);
  CHECK(tape.grad(w).item() == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("stop-gradient barrier blocks exactly") {
  Tape tape;
  Tensor x = tape.leaf(Tensor({2}, {1.5, -0.5}));
  Tensor y = tape.leaf(Tensor({2}, {2.0, 3.0}));
  Tensor loss = sum(mul(stop_grad(x), y));
  tape.backward(loss);
  Tensor gx = tape.grad(x);
  CHECK(gx[0] == 0.0);
  CHECK(gx[1] == 0.0);
  Tensor gy = tape.grad(y);
  CHECK(gy[0] == 1.5);
  CHECK(gy[1] == -0.5);
  // perturbing x does change the loss value
  Tensor x2 = x.clone();
  x2[0] += 0.1;
  CHECK(sum(mul(x2, y.clone())).item() != loss.item());
}

TEST_CASE("backward errors") {
  Tape tape;
  Tensor x = tape.leaf(Tensor({2}, {1, 2}));
  Tensor y = mul(x, x);
  CHECK_THROWS_WITH_AS(tape.backward(y), doctest::Contains("scalar"), EngineError);

  Tape t2;
  Tensor a = t2.leaf(Tensor({2}, {1, 2}));
  Tensor l = sum(a);
  t2.backward(l);
  CHECK_THROWS_AS(t2.backward(l), EngineError);
}

TEST_CASE("shape mismatch names the op and both shapes") {
  Tensor a({2, 2});
  Tensor b({3});
  try {
    add(a, b);
    FAIL("expected throw");
  } catch (const EngineError& e) {
    std::string msg = e.what();
    CHECK(msg.find("add") != std::string::npos);
    CHECK(msg.find("{2,2}") != std::string::npos);
    CHECK(msg.find("{3}") != std::string::npos);
  }
  CHECK_THROWS_AS(matmul(Tensor({2, 3}), Tensor({2, 3})), EngineError);
}

TEST_CASE("non-finite forward value raises with op name") {
  Tape tape;
  Tensor x = tape.leaf(Tensor::scalar(1e308));
  CHECK_THROWS_WITH_AS(add(x, x), doctest::Contains("add"), EngineError);
  Tape t2;
  Tensor z = t2.leaf(Tensor::scalar(0.0));
  CHECK_THROWS_AS(div(t2.leaf(Tensor::scalar(1.0)), z), EngineError);
}

TEST_CASE("finite_diff_check validates a hand gradient") {
  auto f = [](Tape&, const std::vector<Tensor>& p) {
    return sum(mul(p[0], p[0]));
  };
  std::vector<Tensor> point = {Tensor({2}, {1.0, 2.0})};
  FdReport r = finite_diff_check(f, point, 1e-5, 1e-8);
  CHECK(r.pass);
  CHECK(r.max_rel_err <= 1e-8);
}

TEST_CASE("finite_diff_check rejects a wrong gradient") {
  // f computes x^2 forward but we sabotage by using stop_grad on half the path
  auto f = [](Tape&, const std::vector<Tensor>& p) {
    return sum(mul(stop_grad(p[0]), p[0]));  // analytic grad x, true grad 2x
  };
  std::vector<Tensor> point = {Tensor({2}, {1.0, 2.0})};
  FdReport r = finite_diff_check(f, point, 1e-5, 1e-6);
  CHECK(!r.pass);
}

TEST_CASE("finite_diff_check detects nondeterminism") {
  int calls = 0;
  auto f = [&calls](Tape&, const std::vector<Tensor>& p) {
    ++calls;
    return add_scalar(sum(p[0]), calls * 0.1);
  };
  std::vector<Tensor> point = {Tensor({1}, {1.0})};
  CHECK_THROWS_WITH_AS(finite_diff_check(f, point),
                       doctest::Contains("non-deterministic"), EngineError);
}

TEST_CASE("dct2d orthonormal round trip and energy preservation") {
  Rng rng(7);
  Tensor x = random_tensor({16, 8, 3}, rng);
  Tensor y = dct2d(x);
  Tensor back = idct2d(y);
  double e_x = 0.0, e_y = 0.0, max_diff = 0.0;
  for (int64_t i = 0; i < x.size(); ++i) {
    e_x += x[i] * x[i];
    e_y += y[i] * y[i];
    max_diff = std::max(max_diff, std::abs(back[i] - x[i]));
  }
  CHECK(max_diff < 1e-12);
  CHECK(e_x == doctest::Approx(e_y).epsilon(1e-12));
  // constant block concentrates in the DC bin
  Tensor c = Tensor::full({8, 8, 1}, 0.5);
  Tensor dc = dct2d(c);
  CHECK(dc[0] == doctest::Approx(0.5 * 8).epsilon(1e-12));
  double off = 0.0;
  for (int64_t i = 1; i < dc.size(); ++i) off += std::abs(dc[i]);
  CHECK(off < 1e-12);
  CHECK_THROWS_AS(dct2d(Tensor({9, 8, 1})), EngineError);
}

TEST_CASE("softmax rows are probability distributions") {
  Rng rng(3);
  Tensor x = random_tensor({5, 7}, rng, -4, 4);
  Tensor s = softmax_rows(x);
  for (int i = 0; i < 5; ++i) {
    double row = 0.0;
    for (int j = 0; j < 7; ++j) {
      CHECK(s.at(i, j) > 0.0);
      row += s.at(i, j);
    }
    CHECK(row == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("batch_norm training vs eval") {
  Rng rng(11);
  Tensor x = random_tensor({8, 4}, rng);
  Tensor gamma = Tensor::full({4}, 1.0);
  Tensor beta = Tensor({4});
  Tensor rm({4}), rv = Tensor::full({4}, 1.0);
  Tensor y = batch_norm(x, gamma, beta, rm, rv, true, 0.1);
  // batch statistics of the output are ~0 mean, ~1 var
  for (int j = 0; j < 4; ++j) {
    double mu = 0.0;
    for (int i = 0; i < 8; ++i) mu += y.at(i, j);
    mu /= 8;
    CHECK(std::abs(mu) < 1e-12);
  }
  // running buffers moved toward the batch stats
  bool moved = false;
  for (int j = 0; j < 4; ++j) {
    if (rm[j] != 0.0) moved = true;
  }
  CHECK(moved);
  // eval mode uses the running buffers and is deterministic
  Tensor e1 = batch_norm(x, gamma, beta, rm, rv, false);
  Tensor rm2 = rm.clone(), rv2 = rv.clone();
  Tensor e2 = batch_norm(x, gamma, beta, rm2, rv2, false);
  for (int64_t i = 0; i < e1.size(); ++i) CHECK(e1[i] == e2[i]);
}

TEST_CASE("reshape, slice, concat, transpose round trips") {
  Rng rng(5);
  Tensor x = random_tensor({4, 6}, rng);
  Tensor r = reshape(x, {6, 4});
  CHECK(reshape(r, {4, 6}).vec() == x.vec());
  Tensor left = slice_cols(x, 0, 2), right = slice_cols(x, 2, 4);
  std::vector<Tensor> parts = {left, right};
  Tensor back = concat_cols(parts);
  CHECK(back.vec() == x.vec());
  Tensor top = slice_rows(x, 0, 1), bottom = slice_rows(x, 1, 3);
  std::vector<Tensor> vparts = {top, bottom};
  CHECK(concat_rows(vparts).vec() == x.vec());
  Tensor tt = transpose(transpose(x));
  CHECK(tt.vec() == x.vec());
}

TEST_CASE("deterministic replay is bit-identical") {
  auto run = [] {
    Rng rng(12345);
    Tensor x = random_tensor({6, 6, 3}, rng);
    Tape tape;
    Tensor xl = tape.leaf(x);
    Tensor k = tape.leaf(random_tensor({3, 3}, rng));
    Tensor loss = mean(mul(conv2d(xl, k), conv2d(xl, k)));
    tape.backward(loss);
    Tensor g = tape.grad(k);
    std::vector<double> out = {loss.item()};
    for (int64_t i = 0; i < g.size(); ++i) out.push_back(g[i]);
    return out;
  };
  CHECK(run() == run());
}

TEST_CASE("tape dump lists entries") {
  Tape tape;
  Tensor x = tape.leaf(Tensor({2}, {1, 2}));
  Tensor loss = sum(mul(x, x));
  std::ostringstream os;
  tape.dump(os);
  std::string s = os.str();
  CHECK(s.find("mul") != std::string::npos);
  CHECK(s.find("sum") != std::string::npos);
  CHECK(s.find("stop_grad") == std::string::npos);
  Tensor b = stop_grad(x);
  std::ostringstream os2;
  tape.dump(os2);
  CHECK(os2.str().find("stop_grad") != std::string::npos);
  tape.backward(loss);
}

// Table-driven finite-difference pass over every differentiable primitive.
TEST_CASE("all primitives pass finite-difference checks") {
  struct Case {
    const char* name;
    std::function<Tensor(Tape&, const std::vector<Tensor>&)> f;
    std::function<std::vector<Tensor>(Rng&)> sample;
  };

  auto vec = [](Rng& rng, Shape s, double lo, double hi) {
    Tensor t(std::move(s));
    for (int64_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
  };

  std::vector<Case> cases;
  auto weighted_sum = [](const Tensor& t) {
    // fixed non-uniform weights so gradients are not all equal
    Tensor w(t.shape());
    for (int64_t i = 0; i < w.size(); ++i) {
      w[i] = 0.3 + 0.1 * static_cast<double>(i % 7);
    }
    return sum(mul(t, w));
  };

  cases.push_back({"add", [&](Tape&, const std::vector<Tensor>& p) {
                     return weighted_sum(add(p[0], p[1]));
                   },
                   [&](Rng& r) {
                     return std::vector<Tensor>{vec(r, {3, 4}, -1, 1),
                                                vec(r, {3, 4}, -1, 1)};
                   }});
  cases.push_back({"sub_bcast_scalar", [&](Tape&, const std::vector<Tensor>& p) {
                     return weighted_sum(sub(p[0], p[1]));
                   },
                   [&](Rng& r) {
                     return std::vector<Tensor>{vec(r, {3, 4}, -1, 1),
                                                vec(r, {1}, -1, 1)};
                   }});
  cases.push_back({"mul_bcast_lastdim", [&](Tape&, const std::vector<Tensor>& p) {
                     return weighted_sum(mul(p[0], p[1]));
                   },
                   [&](Rng& r) {
                     return std::vector<Tensor>{vec(r, {3, 4}, -1, 1),
                                                vec(r, {4}, -1, 1)};
                   }});
  cases.push_back({"mul_bcast_spatial", [&](Tape&, const std::vector<Tensor>& p) {
                     return weighted_sum(mul(p[0], p[1]));
                   },
                   [&](Rng& r) {
                     return std::vector<Tensor>{vec(r, {4, 5, 3}, -1, 1),
                                                vec(r, {4, 5}, -1, 1)};
                   }});
  cases.push_back({"div", [&](Tape&, const std::vector<Tensor>& p) {
                     return weighted_sum(div(p[0], p[1]));
                   },
                   [&](Rng& r) {
                     return std::vector<Tensor>{vec(r, {3, 4}, -1, 1),
                                                vec(r, {3, 4}, 0.5, 2.0)};
                   }});
  cases.push_back({"exp", [&](Tape&, const std::vector<Tensor>& p) {
                     return weighted_sum(exp(p[0]));
                   },
                   [&](Rng& r) {
                     return std::vector<Tensor>{vec(r, {3, 4}, -1, 1)};
                   }});
  cases.push_back({"log", [&](Tape&, const std::vector<Tensor>& p) {
                     return weighted_sum(log(p[0]));
                   },
                   [&](Rng& r) {
                     return std::vector<Tensor>{vec(r, {3, 4}, 0.2, 3.0)};
                   }});
  cases.push_back({"sin", [&](Tape&, const std::vector<Tensor>& p) {
                     return weighted_sum(sin(p[0]));
                   },
                   [&](Rng& r) {
                     return std::vector<Tensor>{vec(r, {3, 4}, -3, 3)};
                   }});
  cases.push_back({"sqrt", [&](Tape&, const std::vector<Tensor>& p) {
                     return weighted_sum(sqrt(p[0]));
                   },
                   [&](Rng& r) {
                     return std::vector<Tensor>{vec(r, {3, 4}, 0.3, 3.0)};
                   }});
  cases.push_back({"sigmoid", [&](Tape&, const std::vector<Tensor>& p) {
                     return weighted_sum(sigmoid(p[0]));
                   },
                   [&](Rng& r) {
                     return std::vector<Tensor>{vec(r, {3, 4}, -3, 3)};
                   }});
  cases.push_back({"softplus", [&](Tape&, const std::vector<Tensor>& p) {
                     return weighted_sum(softplus(p[0]));
                   },
                   [&](Rng& r) {
                     return std::vector<Tensor>{vec(r, {3, 4}, -3, 3)};
                   }});
  cases.push_back({"relu", [&](Tape&, const std::vector<Tensor>& p) {
                     return weighted_sum(relu(p[0]));
                   },
                   [&](Rng& r) {
                     // keep coordinates away from the kink
                     Tensor t = vec(r, {3, 4}, 0.2, 1.0);
                     for (int64_t i = 0; i < t.size(); ++i) {
                       if (i % 2 == 0) t[i] = -t[i];
                     }
                     return std::vector<Tensor>{t};
                   }});
  cases.push_back({"gelu", [&](Tape&, const std::vector<Tensor>& p) {
                     return weighted_sum(gelu(p[0]));
                   },
                   [&](Rng& r) {
                     return std::vector<Tensor>{vec(r, {3, 4}, -2, 2)};
                   }});
  cases.push_back({"pow_channels", [&](Tape&, const std::vector<Tensor>& p) {
                     return weighted_sum(pow_channels(p[0], p[1]));
                   },
                   [&](Rng& r) {
                     return std::vector<Tensor>{vec(r, {3, 4, 2}, 0.2, 1.0),
                                                vec(r, {2}, 0.5, 2.0)};
                   }});
  cases.push_back({"clamp", [&](Tape&, const std::vector<Tensor>& p) {
                     return weighted_sum(clamp(p[0], -0.5, 0.5));
                   },
                   [&](Rng& r) {
                     // away from the clamp knees
                     Tensor t = vec(r, {3, 4}, -0.4, 0.4);
                     t[0] = 0.8;
                     t[1] = -0.9;
                     return std::vector<Tensor>{t};
                   }});
  cases.push_back({"floor_const", [&](Tape&, const std::vector<Tensor>& p) {
                     return weighted_sum(floor_const(p[0]));
                   },
                   [&](Rng& r) {
                     return std::vector<Tensor>{vec(r, {3, 4}, 0.1, 0.9)};
                   }});
  cases.push_back({"mean", [&](Tape&, const std::vector<Tensor>& p) {
                     return mean(mul(p[0], p[0]));
                   },
                   [&](Rng& r) {
                     return std::vector<Tensor>{vec(r, {3, 4}, -1, 1)};
                   }});
  cases.push_back({"sum_cols", [&](Tape&, const std::vector<Tensor>& p) {
                     return weighted_sum(sum_cols(mul(p[0], p[0])));
                   },
                   [&](Rng& r) {
                     return std::vector<Tensor>{vec(r, {4, 3}, -1, 1)};
                   }});
  cases.push_back({"add_bias", [&](Tape&, const std::vector<Tensor>& p) {
                     return weighted_sum(add_bias(p[0], p[1]));
                   },
                   [&](Rng& r) {
                     return std::vector<Tensor>{vec(r, {3, 4}, -1, 1),
                                                vec(r, {4}, -1, 1)};
                   }});
  cases.push_back({"matmul", [&](Tape&, const std::vector<Tensor>& p) {
                     return weighted_sum(matmul(p[0], p[1]));
                   },
                   [&](Rng& r) {
                     return std::vector<Tensor>{vec(r, {3, 4}, -1, 1),
                                                vec(r, {4, 2}, -1, 1)};
                   }});
  cases.push_back({"transpose", [&](Tape&, const std::vector<Tensor>& p) {
                     return weighted_sum(transpose(p[0]));
                   },
                   [&](Rng& r) {
                     return std::vector<Tensor>{vec(r, {3, 4}, -1, 1)};
                   }});
  cases.push_back({"reshape_slice_concat",
                   [&](Tape&, const std::vector<Tensor>& p) {
                     Tensor r = reshape(p[0], {2, 6});
                     Tensor a = slice_cols(r, 0, 3);
                     Tensor b = slice_cols(r, 3, 3);
                     std::vector<Tensor> parts = {b, a};
                     return weighted_sum(mul(concat_cols(parts), concat_cols(parts)));
                   },
                   [&](Rng& r) {
                     return std::vector<Tensor>{vec(r, {3, 4}, -1, 1)};
                   }});
  cases.push_back({"softmax_rows", [&](Tape&, const std::vector<Tensor>& p) {
                     return weighted_sum(softmax_rows(p[0]));
                   },
                   [&](Rng& r) {
                     return std::vector<Tensor>{vec(r, {3, 5}, -2, 2)};
                   }});
  cases.push_back({"l2_normalize_rows", [&](Tape&, const std::vector<Tensor>& p) {
                     return weighted_sum(l2_normalize_rows(p[0]));
                   },
                   [&](Rng& r) {
                     return std::vector<Tensor>{vec(r, {3, 5}, 0.3, 1.5)};
                   }});
  cases.push_back({"layer_norm", [&](Tape&, const std::vector<Tensor>& p) {
                     return weighted_sum(layer_norm(p[0], p[1], p[2]));
                   },
                   [&](Rng& r) {
                     return std::vector<Tensor>{vec(r, {3, 5}, -1, 1),
                                                vec(r, {5}, 0.5, 1.5),
                                                vec(r, {5}, -0.5, 0.5)};
                   }});
  cases.push_back({"batch_norm_train", [&](Tape&, const std::vector<Tensor>& p) {
                     Tensor rm({5}), rv = Tensor::full({5}, 1.0);
                     return weighted_sum(
                         batch_norm(p[0], p[1], p[2], rm, rv, true));
                   },
                   [&](Rng& r) {
                     return std::vector<Tensor>{vec(r, {6, 5}, -1, 1),
                                                vec(r, {5}, 0.5, 1.5),
                                                vec(r, {5}, -0.5, 0.5)};
                   }});
  cases.push_back({"batch_norm_eval", [&](Tape&, const std::vector<Tensor>& p) {
                     Tensor rm({5}), rv = Tensor::full({5}, 1.0);
                     for (int j = 0; j < 5; ++j) {
                       rm[j] = 0.1 * j;
                       rv[j] = 1.0 + 0.2 * j;
                     }
                     return weighted_sum(
                         batch_norm(p[0], p[1], p[2], rm, rv, false));
                   },
                   [&](Rng& r) {
                     return std::vector<Tensor>{vec(r, {6, 5}, -1, 1),
                                                vec(r, {5}, 0.5, 1.5),
                                                vec(r, {5}, -0.5, 0.5)};
                   }});
  cases.push_back({"conv2d", [&](Tape&, const std::vector<Tensor>& p) {
                     return weighted_sum(conv2d(p[0], p[1]));
                   },
                   [&](Rng& r) {
                     return std::vector<Tensor>{vec(r, {5, 6, 2}, -1, 1),
                                                vec(r, {3, 3}, -1, 1)};
                   }});
  cases.push_back({"avg_pool", [&](Tape&, const std::vector<Tensor>& p) {
                     return weighted_sum(avg_pool(p[0], 2, 2));
                   },
                   [&](Rng& r) {
                     return std::vector<Tensor>{vec(r, {6, 6, 2}, -1, 1)};
                   }});
  cases.push_back({"bilinear_grid_sample",
                   [&](Tape&, const std::vector<Tensor>& p) {
                     return weighted_sum(bilinear_grid_sample(p[0], p[1]));
                   },
                   [&](Rng& r) {
                     // generic non-integer coordinates, some outside
                     Tensor img = vec(r, {5, 5, 2}, -1, 1);
                     Tensor grid({4, 4, 2});
                     for (int i = 0; i < 4; ++i) {
                       for (int j = 0; j < 4; ++j) {
                         grid.at(i, j, 0) = r.uniform(-0.7, 5.3);
                         grid.at(i, j, 1) = r.uniform(-0.7, 5.3);
                       }
                     }
                     return std::vector<Tensor>{img, grid};
                   }});
  cases.push_back({"homography_grid", [&](Tape&, const std::vector<Tensor>& p) {
                     return weighted_sum(
                         bilinear_grid_sample(p[1], homography_grid(p[0], 6, 6)));
                   },
                   [&](Rng& r) {
                     Tensor A({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
                     for (int i = 0; i < 2; ++i) {
                       for (int j = 0; j < 2; ++j) {
                         A.at(i, j) += r.uniform(-0.05, 0.05);
                       }
                     }
                     A.at(0, 2) = r.uniform(-0.8, 0.8);
                     A.at(1, 2) = r.uniform(-0.8, 0.8);
                     A.at(2, 0) = r.uniform(-0.004, 0.004);
                     A.at(2, 1) = r.uniform(-0.004, 0.004);
                     return std::vector<Tensor>{A, vec(r, {6, 6, 2}, -1, 1)};
                   }});
  cases.push_back({"dct2d", [&](Tape&, const std::vector<Tensor>& p) {
                     return weighted_sum(dct2d(p[0]));
                   },
                   [&](Rng& r) {
                     return std::vector<Tensor>{vec(r, {8, 8, 2}, -1, 1)};
                   }});
  cases.push_back({"idct2d", [&](Tape&, const std::vector<Tensor>& p) {
                     return weighted_sum(idct2d(p[0]));
                   },
                   [&](Rng& r) {
                     return std::vector<Tensor>{vec(r, {8, 8, 2}, -1, 1)};
                   }});
  cases.push_back({"smooth_quantize", [&](Tape&, const std::vector<Tensor>& p) {
                     return weighted_sum(smooth_quantize(p[0], p[1]));
                   },
                   [&](Rng& r) {
                     // fractional parts well inside the unit interval
                     Tensor z({3, 4});
                     for (int64_t i = 0; i < z.size(); ++i) {
                       z[i] = r.uniform_int(9) - 4 + r.uniform(0.15, 0.85);
                     }
                     return std::vector<Tensor>{
                         z, Tensor::scalar(r.uniform(2.0, 6.0))};
                   }});
  cases.push_back({"cosine_rows", [&](Tape&, const std::vector<Tensor>& p) {
                     return weighted_sum(cosine_rows(p[0], p[1]));
                   },
                   [&](Rng& r) {
                     return std::vector<Tensor>{vec(r, {3, 5}, 0.2, 1.2),
                                                vec(r, {3, 5}, -1.2, -0.2)};
                   }});

  for (const Case& c : cases) {
    CAPTURE(c.name);
    double worst = 0.0;
    for (uint64_t seed = 1; seed <= 20; ++seed) {
      Rng rng(seed * 7919);
      std::vector<Tensor> point = c.sample(rng);
      FdReport r = finite_diff_check(c.f, point, 1e-5, 1e-6);
      worst = std::max(worst, r.max_rel_err);
      if (!r.pass) {
        MESSAGE("primitive ", c.name, " seed ", seed, " max_rel_err ",
                r.max_rel_err);
      }
      CHECK(r.pass);
    }
  }
}
