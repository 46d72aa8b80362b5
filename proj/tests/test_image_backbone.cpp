#include <doctest.h>

#include "rvo/errors.hpp"
#include "rvo/image_backbone.hpp"
#include "support/testing.hpp"

using namespace rvo;

TEST_CASE("image pyramid produces one map per level at stride 2^l") {
  ModelConfig cfg;
  cfg.image_widths = {4, 6, 8, 10};
  nn::ParamStore<float> store(1);
  model::ImageBackbone<float> net(store, "image", cfg);
  const auto images = ag::Var<float>::constant({2, 64, 96, 3}, 0.3f);
  const auto maps = net.forward(images, nn::Mode{});
  REQUIRE(maps.size() == 4);
  for (int l = 0; l < 4; ++l) {
    const int s = 2 << l;
    CHECK(maps[l].shape() == ag::Shape{2, 64 / s, 96 / s, cfg.image_widths[l]});
  }
}

TEST_CASE("images of unsupported size are rejected") {
  ModelConfig cfg;
  cfg.image_widths = {4, 4, 4, 4};
  nn::ParamStore<float> store(1);
  model::ImageBackbone<float> net(store, "image", cfg);
  CHECK_THROWS_AS(net.forward(ag::Var<float>::constant({1, 40, 64, 3}, 0.f), nn::Mode{}), ShapeError);
  CHECK_THROWS_AS(net.forward(ag::Var<float>::constant({1, 16, 16, 3}, 0.f), nn::Mode{}), ShapeError);
  CHECK_THROWS_AS(net.forward(ag::Var<float>::constant({1, 64, 64, 1}, 0.f), nn::Mode{}), ShapeError);
}

TEST_CASE("pack normalizes per channel") {
  model::ImageFrame f{1, 2, {0.5f, 0.25f, 1.0f, 0.0f, 0.75f, 0.5f}};
  const auto t = model::ImageBackbone<double>::pack({&f}, {0.5, 0.5, 0.5}, {0.25, 0.5, 1.0});
  CHECK(t.shape() == ag::Shape{1, 1, 2, 3});
  CHECK(t.value()[0] == doctest::Approx(0.0));
  CHECK(t.value()[1] == doctest::Approx(-0.5));
  CHECK(t.value()[2] == doctest::Approx(0.5));
  CHECK(t.value()[3] == doctest::Approx(-2.0));
}

TEST_CASE("feature sampling divides pixel coordinates by the stride") {
  std::vector<double> map(4 * 4);
  for (int i = 0; i < 16; ++i) map[i] = i;
  const auto m = ag::Var<double>::constant({1, 4, 4, 1}, map);
  const auto uv = ag::Var<double>::constant({1, 2}, std::vector<double>{4.0, 8.0});
  // Level 1 has stride 2: (4, 8) lands on (2, 4) and clamps to row 3.
  const auto s = model::sample_features(m, uv, 1, {0});
  CHECK(s.item() == doctest::Approx(3 * 4 + 2));
}

TEST_CASE("image backbone gradients match finite differences") {
  ModelConfig cfg;
  cfg.num_levels = 2;
  cfg.image_widths = {3, 4};
  nn::ParamStore<double> store(2);
  model::ImageBackbone<double> net(store, "image", cfg);
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(-1, 1);
  std::vector<double> px(2 * 32 * 32 * 3);
  for (auto& v : px) v = u(rng);
  const auto images = ag::Var<double>::constant({2, 32, 32, 3}, px);
  const auto loss = [&] { return testing::random_projection(net.forward(images, nn::Mode{}).back(), 3); };
  // Steps of 1e-4 already push some activations across ReLU kinks.
  const auto r = testing::grad_check(testing::all_params(store), loss, 1e-5, 6);
  INFO("worst tensor " << r.worst_tensor);
  CHECK(r.ok(1e-4));
}
