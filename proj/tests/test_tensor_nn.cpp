#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "oracles.hpp"
#include "tricov/checkpoint.hpp"
#include "tricov/errors.hpp"
#include "tricov/gradcheck.hpp"
#include "tricov/nn.hpp"
#include "tricov/random.hpp"

using namespace tricov;

namespace {

Tensor<double> random_tensor(std::vector<std::size_t> shape, Rng& rng, bool integers = false) {
  Tensor<double> t(std::move(shape));
  for (double& v : t.data) v = integers ? static_cast<double>(rng.below(7)) - 3.0 : rng.normal();
  return t;
}

ConvLayer<double> random_layer(std::size_t in, std::size_t out, std::size_t k, bool relu, Rng& rng,
                               bool integers = false) {
  auto layer = ConvLayer<double>::make("test", in, out, k, relu);
  for (double& v : layer.weights.data) v = integers ? static_cast<double>(rng.below(5)) - 2.0 : rng.normal();
  for (double& v : layer.bias.data) v = integers ? static_cast<double>(rng.below(5)) - 2.0 : rng.normal();
  return layer;
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("tricov_nn_" + name);
}

}  // namespace

TEST_CASE("layer table") {
  const Network<float> net;
  const std::size_t kernels[] = {5, 5, 3, 3, 1};
  const std::size_t features[] = {32, 128, 128, 256, 2};
  for (std::size_t i = 0; i < kNumLayers; ++i) {
    CHECK(net.layers()[i].kernel_size == kernels[i]);
    CHECK(net.layers()[i].out_channels == features[i]);
    CHECK(net.layers()[i].has_relu == (i + 1 < kNumLayers));
  }
  CHECK(kLayerTable[0].pool_after);
  CHECK(kLayerTable[1].pool_after);
  CHECK_FALSE(kLayerTable[2].pool_after);
  CHECK(Network<float>::output_extent(32) == 1);
  CHECK(Network<float>::output_extent(31) == 0);
  CHECK(Network<float>::output_extent(64) == 9);
}

TEST_CASE("conv_forward basics") {
  SUBCASE("1x1 identity") {
    auto layer = ConvLayer<double>::make("id", 1, 1, 1, false);
    layer.weights.data = {1.0};
    layer.bias.data = {0.0};
    Rng rng(1);
    const auto in = random_tensor({1, 4, 5}, rng);
    const auto out = conv_forward(in, layer);
    CHECK(out.shape == in.shape);
    CHECK(out.data == in.data);
  }
  SUBCASE("3x3 ones") {
    auto layer = ConvLayer<double>::make("ones", 1, 1, 3, true);
    layer.weights.data.assign(9, 1.0);
    layer.bias.data = {0.0};
    const Tensor<double> in({1, 3, 3}, 1.0);
    const auto out = conv_forward(in, layer);
    REQUIRE(out.size() == 1);
    CHECK(out.data[0] == 9.0);
  }
  SUBCASE("random 5x5 with 3x3 kernel matches the loop oracle exactly") {
    Rng rng(2);
    for (int trial = 0; trial < 20; ++trial) {
      const auto layer = random_layer(1, 1, 3, trial % 2 == 0, rng, true);
      const auto in = random_tensor({1, 5, 5}, rng, true);
      const auto out = conv_forward(in, layer);
      const auto ref = oracle::conv(in.data, 1, 5, 5, layer.weights.data, layer.bias.data, 1, 3,
                                    layer.has_relu);
      CHECK(out.data == ref);
    }
  }
  SUBCASE("multi-channel real values") {
    Rng rng(3);
    const auto layer = random_layer(3, 4, 3, true, rng);
    const auto in = random_tensor({3, 7, 6}, rng);
    const auto out = conv_forward(in, layer);
    CHECK(out.shape == std::vector<std::size_t>{4, 5, 4});
    const auto ref = oracle::conv(in.data, 3, 7, 6, layer.weights.data, layer.bias.data, 4, 3, true);
    for (std::size_t i = 0; i < ref.size(); ++i) CHECK(out.data[i] == doctest::Approx(ref[i]).epsilon(1e-12));
  }
  SUBCASE("shape errors name the layer") {
    auto layer = ConvLayer<double>::make("conv7", 2, 1, 3, false);
    const Tensor<double> wrong_channels({1, 5, 5});
    try {
      conv_forward(wrong_channels, layer);
      FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
      CHECK(std::string(e.what()).find("conv7") != std::string::npos);
    }
    const Tensor<double> small({2, 2, 2});
    CHECK_THROWS_AS(conv_forward(small, layer), ShapeError);
  }
}

TEST_CASE("maxpool_forward") {
  SUBCASE("2x2") {
    Tensor<double> in({1, 2, 2});
    in.data = {1, 2, 3, 4};
    const auto r = maxpool_forward(in);
    REQUIRE(r.output.size() == 1);
    CHECK(r.output.data[0] == 4.0);
    CHECK(r.argmax[0] == 3);
  }
  SUBCASE("constant input keeps the first index") {
    const Tensor<double> in({1, 4, 4}, 2.5);
    const auto r = maxpool_forward(in);
    for (double v : r.output.data) CHECK(v == 2.5);
    CHECK(r.argmax[0] == 0);
    CHECK(r.argmax[1] == 2);
    CHECK(r.argmax[2] == 8);
  }
  SUBCASE("random 8x8 against window scan") {
    Rng rng(4);
    for (int trial = 0; trial < 10; ++trial) {
      const auto in = random_tensor({3, 8, 8}, rng);
      const auto r = maxpool_forward(in);
      CHECK(r.output.data == oracle::maxpool(in.data, 3, 8, 8));
    }
  }
  SUBCASE("odd extents use floor") {
    Rng rng(5);
    const auto in = random_tensor({2, 7, 5}, rng);
    const auto r = maxpool_forward(in);
    CHECK(r.output.shape == std::vector<std::size_t>{2, 3, 2});
    CHECK(r.output.data == oracle::maxpool(in.data, 2, 7, 5));
  }
  SUBCASE("backward routes to argmax") {
    Tensor<double> in({1, 2, 4});
    in.data = {1, 5, 2, 0, 3, 4, 9, 1};
    const auto r = maxpool_forward(in);
    Tensor<double> d({1, 1, 2});
    d.data = {10, 20};
    const auto g = maxpool_backward(d, r.argmax, in.shape);
    CHECK(g.data == std::vector<double>{0, 10, 0, 0, 0, 0, 20, 0});
  }
}

TEST_CASE("network forward") {
  std::vector<float> patch(kPatchSize * kPatchSize);
  Rng rng(6);
  for (float& v : patch) v = static_cast<float>(rng.normal());

  SUBCASE("zero weights give zero output") {
    Network<float> net;
    const auto out = net.forward_patch(patch);
    CHECK(out[0] == 0.0f);
    CHECK(out[1] == 0.0f);
  }
  SUBCASE("deterministic and two outputs") {
    const auto a = Network<float>::initialized(42);
    const auto b = Network<float>::initialized(42);
    Tensor<float> in({1, kPatchSize, kPatchSize});
    in.data = patch;
    const auto oa = a.forward(in);
    const auto ob = b.forward(in);
    CHECK(oa.size() == 2);
    CHECK(oa.data == ob.data);
    CHECK(std::isfinite(oa.data[0]));
  }
  SUBCASE("wrong input size") {
    Network<float> net;
    std::vector<float> small(31 * 31);
    CHECK_THROWS_AS(net.forward_patch(small), ShapeError);
    CHECK_THROWS_AS(net.forward(Tensor<float>({2, 32, 32})), ShapeError);
  }
}

TEST_CASE("dense forward consistency") {
  const auto net = Network<double>::initialized(7);
  Rng rng(8);
  const std::size_t w = 64, h = 48;
  Tensor<double> image({h, w});
  for (double& v : image.data) v = rng.normal();
  const auto dense = net.forward(image);
  const std::size_t rows = Network<double>::output_extent(h);
  const std::size_t cols = Network<double>::output_extent(w);
  CHECK(rows == (h - 32) / 4 + 1);
  CHECK(cols == (w - 32) / 4 + 1);
  REQUIRE(dense.shape == std::vector<std::size_t>{2, rows, cols});

  SUBCASE("patch forward equals the grid cell") {
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) {
        std::vector<double> patch(kPatchSize * kPatchSize);
        for (std::size_t y = 0; y < kPatchSize; ++y)
          for (std::size_t x = 0; x < kPatchSize; ++x)
            patch[y * kPatchSize + x] = image.data[(4 * r + y) * w + 4 * c + x];
        const auto p = net.forward_patch(patch);
        CHECK(p[0] == doctest::Approx(dense.data[r * cols + c]).epsilon(1e-10));
        CHECK(p[1] == doctest::Approx(dense.data[rows * cols + r * cols + c]).epsilon(1e-10));
      }
    }
  }
  SUBCASE("shift by 4 pixels shifts the grid by one cell") {
    Tensor<double> shifted({h, w - 4});
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w - 4; ++x) shifted.data[y * (w - 4) + x] = image.data[y * w + x + 4];
    const auto out = net.forward(shifted);
    const std::size_t cols2 = out.shape[2];
    REQUIRE(cols2 == cols - 1);
    for (std::size_t ch = 0; ch < 2; ++ch)
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols2; ++c)
          CHECK(out.data[(ch * rows + r) * cols2 + c] ==
                doctest::Approx(dense.data[(ch * rows + r) * cols + c + 1]).epsilon(1e-10));
  }
  SUBCASE("batched forward equals single forwards") {
    Tensor<double> batch({1, 3, 32, 32});
    for (double& v : batch.data) v = rng.normal();
    const auto out = net.forward(batch);
    REQUIRE(out.shape == std::vector<std::size_t>{2, 3, 1, 1});
    for (std::size_t n = 0; n < 3; ++n) {
      const auto p = net.forward_patch(std::span<const double>(batch.data.data() + n * 1024, 1024));
      CHECK(p[0] == doctest::Approx(out.data[n]).epsilon(1e-10));
      CHECK(p[1] == doctest::Approx(out.data[3 + n]).epsilon(1e-10));
    }
  }
}

TEST_CASE("backward") {
  SUBCASE("single 1x1 linear layer with squared loss") {
    // y = w x + b, L = 0.5 * sum (y - target)^2
    auto layer = ConvLayer<double>::make("lin", 1, 1, 1, false);
    layer.weights.data = {0.5};
    layer.bias.data = {0.25};
    Tensor<double> x({1, 1, 3});
    x.data = {1.0, -2.0, 3.0};
    const std::vector<double> target = {0.0, 1.0, 2.0};
    const auto y = conv_forward(x, layer);
    Tensor<double> dy(y.shape);
    double dw = 0, db = 0;
    for (int i = 0; i < 3; ++i) {
      dy.data[i] = y.data[i] - target[i];
      dw += dy.data[i] * x.data[i];
      db += dy.data[i];
    }
    LayerGrads<double> g{{0.0}, {0.0}};
    const auto dx = conv_backward(x, y, dy, layer, g, true);
    CHECK(g.weights[0] == doctest::Approx(dw));
    CHECK(g.bias[0] == doctest::Approx(db));
    for (int i = 0; i < 3; ++i) CHECK(dx.data[i] == doctest::Approx(0.5 * dy.data[i]));
  }
  SUBCASE("zero upstream gradient") {
    const auto net = Network<double>::initialized(9);
    Tensor<double> in({1, 32, 32});
    Rng rng(10);
    for (double& v : in.data) v = rng.normal();
    ForwardCache<double> cache;
    net.forward(in, &cache);
    auto grads = net.make_grads();
    net.backward(cache, Tensor<double>({2, 1, 1}), grads);
    for (const auto& g : grads) {
      for (double v : g.weights) CHECK(v == 0.0);
      for (double v : g.bias) CHECK(v == 0.0);
    }
  }
  SUBCASE("backward without forward") {
    auto net = Network<double>::initialized(9);
    ForwardCache<double> cache;
    auto grads = net.make_grads();
    CHECK_THROWS_AS(net.backward(cache, Tensor<double>({2, 1, 1}), grads), std::logic_error);
  }
  SUBCASE("finite differences on every layer") {
    GradcheckConfig config;
    config.seed = 11;
    config.coordinates_per_layer = 40;
    config.check_losses = false;
    const auto report = run_gradcheck(config);
    REQUIRE(report.entries.size() == kNumLayers);
    for (const auto& e : report.entries) {
      INFO(e.name << " " << e.max_relative_error << " at " << e.worst);
      CHECK(e.checked == 40);
      CHECK(e.max_relative_error < 1e-4);
    }
  }
}

TEST_CASE("sgd_step") {
  SUBCASE("plain step") {
    std::vector<double> p{1.0}, g{1.0}, v{0.0};
    sgd_step<double>(p, g, v, 0.1, 0.0);
    CHECK(p[0] == doctest::Approx(0.9));
  }
  SUBCASE("two momentum steps") {
    std::vector<double> p{0.0}, g{1.0}, v{0.0};
    sgd_step<double>(p, g, v, 0.1, 0.9);
    CHECK(p[0] == doctest::Approx(-0.1));
    sgd_step<double>(p, g, v, 0.1, 0.9);
    CHECK(p[0] == doctest::Approx(-0.29));
  }
  SUBCASE("zero gradient and velocity") {
    std::vector<double> p{0.7, -3.0}, g{0.0, 0.0}, v{0.0, 0.0};
    sgd_step<double>(p, g, v, 0.1, 0.9);
    CHECK(p == std::vector<double>{0.7, -3.0});
  }
  SUBCASE("defaults") {
    OptimizerState<float> s;
    CHECK(s.momentum == 0.9);
    CHECK(s.learning_rate == 0.1);
    CHECK(s.decay_rate == 0.96);
  }
}

TEST_CASE("lr_decay") {
  OptimizerState<float> s;
  lr_decay(s);
  CHECK(s.learning_rate == doctest::Approx(0.096).epsilon(1e-15));
  for (int i = 1; i < 10; ++i) lr_decay(s);
  CHECK(s.learning_rate == doctest::Approx(0.06648326).epsilon(1e-7));
  CHECK(s.learning_rate == 0.1 * std::pow(0.96, 10));
  OptimizerState<float> flat;
  flat.decay_rate = 1.0;
  for (int i = 0; i < 5; ++i) lr_decay(flat);
  CHECK(flat.learning_rate == 0.1);
}

TEST_CASE("checkpoint round trip") {
  Checkpoint<float> ck;
  ck.network = Network<float>::initialized(12);
  ck.loss.variant = LossVariant::kCovAff;
  ck.loss.alpha = 3.0;
  ck.epoch = 4;
  ck.step_in_epoch = 17;
  ck.global_step = 81;
  ck.batch_size = 16;
  ck.tuple_count = 320;
  ck.seed = 99;
  ck.total_epochs = 10;
  ck.optimizer.learning_rate = 0.1 * std::pow(0.96, 4);
  ck.optimizer.epoch = 4;
  for (const auto& layer : ck.network.layers()) {
    ck.optimizer.velocity.push_back(std::vector<float>(layer.weights.size(), 0.125f));
    ck.optimizer.velocity.push_back(std::vector<float>(layer.bias.size(), -1.5f));
  }
  const auto path = temp_path("roundtrip.ckpt");
  save_checkpoint(path, ck);
  const auto back = load_checkpoint<float>(path);
  for (std::size_t i = 0; i < kNumLayers; ++i) {
    CHECK(back.network.layers()[i].weights.data == ck.network.layers()[i].weights.data);
    CHECK(back.network.layers()[i].bias.data == ck.network.layers()[i].bias.data);
  }
  CHECK(back.optimizer.velocity == ck.optimizer.velocity);
  CHECK(back.optimizer.learning_rate == ck.optimizer.learning_rate);
  CHECK(back.loss.variant == LossVariant::kCovAff);
  CHECK(back.loss.alpha == 3.0);
  CHECK(back.epoch == 4);
  CHECK(back.step_in_epoch == 17);
  CHECK(back.global_step == 81);
  CHECK(back.batch_size == 16);
  CHECK(back.tuple_count == 320);
  CHECK(back.seed == 99);

  SUBCASE("saving the loaded copy gives the same bytes") {
    const auto again = temp_path("roundtrip2.ckpt");
    save_checkpoint(again, back);
    CHECK(file_hash(path) == file_hash(again));
  }
  SUBCASE("wrong precision is rejected") {
    CHECK_THROWS_AS(load_checkpoint<double>(path), InputError);
  }
  SUBCASE("version mismatch") {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(8);
    const std::uint32_t bad = 99;
    f.write(reinterpret_cast<const char*>(&bad), sizeof(bad));
    f.close();
    CHECK_THROWS_AS(load_checkpoint<float>(path), InputError);
  }
  SUBCASE("truncated file") {
    std::filesystem::resize_file(path, 200);
    CHECK_THROWS_AS(load_checkpoint<float>(path), IoError);
  }
  SUBCASE("missing file") {
    CHECK_THROWS_AS(load_checkpoint<float>(temp_path("does_not_exist.ckpt")), IoError);
  }
}
