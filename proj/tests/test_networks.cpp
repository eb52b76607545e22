#include <array>
#include <cmath>

#include "core/nn.hpp"
#include "core/optim.hpp"
#include "core/rng.hpp"
#include "doctest.h"
#include "support/fd_check.hpp"

using namespace headsdf;
using namespace headsdf::testing;

TEST_CASE("positional encoding layout and values") {
  PositionalEncodingSpec pe;
  pe.num_frequencies = 2;
  CHECK(pe.out_dim(3) == 15);

  Tape T;
  Tensor X = Tensor::from(1, 3, {0.25, 0.5, -1.0});
  Var enc = positional_encode(T.constant(X), pe);
  REQUIRE(enc.cols() == 15);
  const Tensor& E = enc.val();
  // Block layout: [x | sin(pi x) | cos(pi x) | sin(2 pi x) | cos(2 pi x)].
  for (int j = 0; j < 3; ++j) {
    CHECK(E.at(0, j) == X.at(0, j));
    const double x = X.at(0, j);
    CHECK(E.at(0, 3 + j) == doctest::Approx(std::sin(M_PI * x)).epsilon(1e-15));
    CHECK(E.at(0, 6 + j) == doctest::Approx(std::cos(M_PI * x)).epsilon(1e-15));
    CHECK(E.at(0, 9 + j) ==
          doctest::Approx(std::sin(2.0 * M_PI * x)).epsilon(1e-15));
    CHECK(E.at(0, 12 + j) ==
          doctest::Approx(std::cos(2.0 * M_PI * x)).epsilon(1e-15));
  }
  // Frozen spot values.
  CHECK(E.at(0, 3) == doctest::Approx(0.7071067811865476).epsilon(1e-14));
  CHECK(E.at(0, 4) == doctest::Approx(1.0).epsilon(1e-14));

  // Widening the encoding appends columns; the shared prefix is unchanged.
  PositionalEncodingSpec wide = pe;
  wide.num_frequencies = 4;
  Tape T2;
  Var enc_w = positional_encode(T2.constant(X), wide);
  REQUIRE(enc_w.cols() == 27);
  for (int j = 0; j < 15; ++j) CHECK(enc_w.val().at(0, j) == E.at(0, j));
}

TEST_CASE("mlp forward matches hand computation") {
  MlpSpec spec;
  spec.widths = {2, 2, 1};
  spec.activation = Activation::kRelu;
  ParameterStore store;
  store.create("net/W1", Tensor::from(2, 2, {1.0, 1.0, 2.0, -0.5}));
  store.create("net/b1", Tensor::from(1, 2, {0.1, -0.2}));
  store.create("net/W2", Tensor::from(2, 1, {2.0, -1.0}));
  store.create("net/b2", Tensor::from(1, 1, {0.05}));
  Tape T;
  ParamBinding bind(T, store);
  Var y = mlp_forward(spec, bind, "net", T.constant(Tensor::from(1, 2, {0.3, -0.4})));
  // z1 = [-0.4, 0.3] -> relu [0, 0.3] -> y = 0.3*(-1) + 0.05 = -0.25
  CHECK(y.val().data[0] == doctest::Approx(-0.25).epsilon(1e-15));
}

TEST_CASE("skip layers widen their input with the raw network input") {
  MlpSpec spec;
  spec.widths = {3, 4, 4, 2};
  spec.skip_layers = {2};
  CHECK(spec.layer_in_dim(1) == 3);
  CHECK(spec.layer_in_dim(2) == 7);
  CHECK(spec.layer_in_dim(3) == 4);
  ParameterStore store;
  init_mlp_fan_in(store, "net", spec, Rng(5));
  CHECK(store.value("net/W2").rows() == 7);
  CHECK(store.value("net/W2").cols() == 4);
  Tape T;
  ParamBinding bind(T, store);
  Rng rng(9);
  Var y = mlp_forward(spec, bind, "net", T.constant(random_tensor(6, 3, rng)));
  CHECK(y.rows() == 6);
  CHECK(y.cols() == 2);

  MlpSpec bad = spec;
  bad.skip_layers = {3};  // last layer: not interior
  CHECK_THROWS_AS(bad.validate(), UsageError);
}

TEST_CASE("initialization is seed-deterministic and prefix-dependent") {
  MlpSpec spec;
  spec.widths = {3, 8, 1};
  ParameterStore a, b;
  init_mlp_fan_in(a, "net", spec, Rng(42));
  init_mlp_fan_in(b, "net", spec, Rng(42));
  CHECK(a.value("net/W1").data == b.value("net/W1").data);
  ParameterStore c;
  init_mlp_fan_in(c, "net", spec, Rng(43));
  CHECK(a.value("net/W1").data != c.value("net/W1").data);
}

TEST_CASE("zero-head init makes the network an exact zero function") {
  MlpSpec spec;
  spec.widths = {3, 16, 16, 3};
  ParameterStore store;
  init_mlp_zero_head(store, "net", spec, Rng(4));
  Tape T;
  ParamBinding bind(T, store);
  Rng rng(12);
  Var y = mlp_forward(spec, bind, "net", T.constant(random_tensor(5, 3, rng)));
  CHECK(y.val().data == std::vector<double>(15, 0.0));
}

TEST_CASE("geometric init starts as a rough sphere distance field") {
  // The init's contract is structural, not pointwise (finite width makes the
  // field wobble): negative inside, positive well outside, zero crossing near
  // the requested radius, and |field - (||x||-r)| small on average.
  PositionalEncodingSpec pe;
  pe.num_frequencies = 6;
  for (const int width : {64, 256}) {
    CAPTURE(width);
    MlpSpec spec;
    spec.widths = {pe.out_dim(3), width, width, width, width,
                   width,          width, width, 17};
    spec.skip_layers = {4};
    GeometricInitOptions opt;
    opt.raw_dims = 3;
    opt.sphere_radius = 0.5;
    ParameterStore store;
    init_mlp_geometric(store, "net", spec, opt, Rng(31));

    auto eval_s = [&](const double* dir, double r) {
      Tensor X(1, 3);
      for (int j = 0; j < 3; ++j) X.at(0, j) = dir[j] * r;
      Tape T;
      ParamBinding bind(T, store);
      Var out =
          mlp_forward(spec, bind, "net", positional_encode(T.constant(X), pe));
      return out.val().at(0, 0);
    };

    Rng rng(77);
    double mean_abs_err = 0.0;
    int count = 0;
    for (int trial = 0; trial < 6; ++trial) {
      double d[3];
      double n = 0.0;
      for (double& v : d) {
        v = rng.normal();
        n += v * v;
      }
      n = std::sqrt(n);
      for (double& v : d) v /= n;

      CHECK(eval_s(d, 0.05) < -0.05);
      CHECK(eval_s(d, 1.4) > 0.05);
      // Bisect the zero crossing along the ray.
      double a = 0.05, b = 1.4;
      for (int it = 0; it < 25; ++it) {
        const double m = 0.5 * (a + b);
        (eval_s(d, m) < 0.0 ? a : b) = m;
      }
      CHECK(a > 0.2);
      CHECK(a < 1.0);
      for (const double r : {0.2, 0.5, 0.9, 1.3}) {
        mean_abs_err += std::abs(eval_s(d, r) - (r - 0.5));
        ++count;
      }
    }
    CHECK(mean_abs_err / count < 0.3);
  }
}

TEST_CASE("store-bound gradients match finite differences") {
  MlpSpec spec;
  spec.widths = {3, 6, 1};
  ParameterStore store;
  init_mlp_fan_in(store, "net", spec, Rng(8));
  Rng rng(3);
  const Tensor X = random_tensor(4, 3, rng);

  auto loss_value = [&]() {
    Tape T;
    ParamBinding bind(T, store);
    Var y = mlp_forward(spec, bind, "net", T.constant(X));
    return sum_all(square(y)).scalar_value();
  };

  store.zero_grads();
  {
    Tape T;
    ParamBinding bind(T, store);
    Var y = mlp_forward(spec, bind, "net", T.constant(X));
    backward_into_store(sum_all(square(y)), bind);
  }

  const double h = 1e-6;
  double max_rel = 0.0;
  for (const std::string& name : store.trainable_names()) {
    Tensor& p = store.value(name);
    for (int64_t k = 0; k < p.size(); ++k) {
      const double saved = p.data[k];
      p.data[k] = saved + h;
      const double fp = loss_value();
      p.data[k] = saved - h;
      const double fm = loss_value();
      p.data[k] = saved;
      const double fd = (fp - fm) / (2.0 * h);
      const double ad = store.grad(name).data[k];
      max_rel = std::max(max_rel,
                         std::abs(ad - fd) /
                             std::max({1.0, std::abs(ad), std::abs(fd)}));
    }
  }
  CHECK(max_rel < 1e-5);
}

TEST_CASE("chunked backward accumulates the full-batch gradient") {
  MlpSpec spec;
  spec.widths = {3, 6, 2};
  ParameterStore store;
  init_mlp_fan_in(store, "net", spec, Rng(18));
  Rng rng(4);
  const Tensor X = random_tensor(6, 3, rng);

  auto run = [&](bool chunked) {
    store.zero_grads();
    if (!chunked) {
      Tape T;
      ParamBinding bind(T, store);
      Var y = mlp_forward(spec, bind, "net", T.constant(X));
      backward_into_store(sum_all(square(y)), bind);
    } else {
      for (int c = 0; c < 2; ++c) {
        Tensor x(3, 3);
        for (int64_t i = 0; i < 3; ++i) {
          for (int64_t j = 0; j < 3; ++j) x.at(i, j) = X.at(c * 3 + i, j);
        }
        Tape T;
        ParamBinding bind(T, store);
        Var y = mlp_forward(spec, bind, "net", T.constant(x));
        backward_into_store(sum_all(square(y)), bind);
      }
    }
    std::vector<double> flat;
    for (const std::string& name : store.trainable_names()) {
      const Tensor& g = store.grad(name);
      flat.insert(flat.end(), g.data.begin(), g.data.end());
    }
    return flat;
  };

  const auto full = run(false);
  const auto chunked = run(true);
  REQUIRE(full.size() == chunked.size());
  for (size_t i = 0; i < full.size(); ++i) {
    CHECK(chunked[i] == doctest::Approx(full[i]).epsilon(1e-12));
  }
}

TEST_CASE("frozen parameters receive no gradient and keep their values") {
  MlpSpec spec;
  spec.widths = {2, 4, 1};
  ParameterStore store;
  init_mlp_fan_in(store, "net", spec, Rng(2));
  store.set_trainable("net/W1", false);
  store.set_trainable("net/b1", false);
  const Tensor w1_before = store.value("net/W1");

  store.zero_grads();
  Tape T;
  ParamBinding bind(T, store);
  Rng rng(5);
  Var y = mlp_forward(spec, bind, "net", T.constant(random_tensor(3, 2, rng)));
  backward_into_store(sum_all(square(y)), bind);
  CHECK(store.grad("net/W1").data == std::vector<double>(8, 0.0));
  CHECK(store.grad("net/W2").data != std::vector<double>(4, 0.0));

  AdamState adam;
  adam_step(store, adam, 1e-2);
  CHECK(store.value("net/W1").data == w1_before.data);
}

TEST_CASE("adam matches a hand-computed trajectory") {
  ParameterStore store;
  store.create("p", Tensor::scalar(1.0));
  AdamState adam;
  const std::array<double, 3> grads = {0.5, -0.25, 0.1};
  const std::array<double, 3> expect = {0.900000002, 0.8733662987078463,
                                        0.8418419430257161};
  for (int t = 0; t < 3; ++t) {
    store.zero_grads();
    store.grad("p").data[0] = grads[t];
    adam_step(store, adam, 0.1);
    CHECK(store.value("p").data[0] == doctest::Approx(expect[t]).epsilon(1e-12));
  }
}

TEST_CASE("learning rate decays exponentially to the final factor") {
  CHECK(lr_schedule(5e-4, 0.1, 0, 1000) == doctest::Approx(5e-4));
  CHECK(lr_schedule(5e-4, 0.1, 1000, 1000) == doctest::Approx(5e-5));
  CHECK(lr_schedule(5e-4, 0.1, 500, 1000) ==
        doctest::Approx(0.00015811388300841897).epsilon(1e-12));
  CHECK(lr_schedule(5e-4, 0.1, 2000, 1000) == doctest::Approx(5e-5));
  CHECK(lr_schedule(3e-4, 0.1, 100, 0) == doctest::Approx(3e-4));
}

TEST_CASE("f32 rounding is idempotent") {
  ParameterStore store;
  store.create("p", Tensor::from(1, 3, {0.1, 1.0 / 3.0, 1e-9}));
  store.round_values_to_f32();
  const std::vector<double> once = store.value("p").data;
  CHECK(once[0] == doctest::Approx(0.1).epsilon(1e-7));
  CHECK(once[0] != 0.1);  // 0.1 is not f32-representable
  store.round_values_to_f32();
  CHECK(store.value("p").data == once);
}
