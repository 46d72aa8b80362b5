#include <doctest.h>

#include "rvo/errors.hpp"
#include "rvo/fusion.hpp"
#include "support/testing.hpp"

using namespace rvo;

namespace {

struct Scene {
  std::vector<geometry::Points<double>> coords;
  ag::Var<double> features;
  ag::Var<double> map;
  std::vector<geometry::Calibration> calib;
};

// Two samples of four points; point 3 of each sample lies behind the camera.
Scene make_scene(int64_t width) {
  Scene s;
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int b = 0; b < 2; ++b) {
    geometry::Points<double> p(4, 3);
    p << 10, 0, 0,  //
        8, 2, 1,    //
        12, -3, -0.5, //
        -5, 0, 0;
    s.coords.push_back(p);
    s.calib.push_back(testing::front_camera(32, 32));
  }
  std::vector<double> f(8 * width), m(2 * 8 * 8 * width);
  for (auto& v : f) v = n(rng);
  for (auto& v : m) v = n(rng);
  s.features = ag::Var<double>::parameter({8, width}, f);
  s.map = ag::Var<double>::parameter({2, 8, 8, width}, m);
  return s;
}

}  // namespace

TEST_CASE("fusion output layout, validity and initial sampling locations") {
  nn::ParamStore<double> store(1);
  model::FusionBlock<double> block(store, "fusion", 4, 3, 2);
  auto s = make_scene(4);
  const auto r = model::fuse_level(s.coords, s.features, s.map, s.calib, {32, 32}, 2, block,
                                   nn::Mode{});
  CHECK(r.fused.shape() == ag::Shape{8, 8});
  CHECK(r.valid == std::vector<uint8_t>{1, 1, 1, 0, 1, 1, 1, 0});
  for (int64_t row : {3, 7}) {
    for (int c = 0; c < 4; ++c) {
      CHECK(r.fused.at(row, c) == 0.0);
      CHECK(r.aggregated.at(row, c) == 0.0);
    }
  }
  for (int64_t row = 0; row < 8; ++row) {
    for (int c = 0; c < 4; ++c) CHECK(r.fused.at(row, 4 + c) == s.features.at(row, c));
    double total = 0;
    for (int k = 0; k < 3; ++k) total += r.weights.at(row, k);
    CHECK(total == doctest::Approx(1.0));
  }
  // Offsets start at zero, so every sample sits on the projected pixel / 4.
  const auto proj = geometry::project_points(s.coords[0], s.calib[0], {32, 32});
  for (int i = 0; i < 3; ++i) {
    for (int k = 0; k < 3; ++k) {
      CHECK(r.locations.at(i * 3 + k, 0) == doctest::Approx(proj.uv(i, 0) / 4.0));
      CHECK(r.locations.at(i * 3 + k, 1) == doctest::Approx(proj.uv(i, 1) / 4.0));
    }
  }
}

TEST_CASE("fusion rejects mismatched inputs") {
  nn::ParamStore<double> store(1);
  model::FusionBlock<double> block(store, "fusion", 4, 3, 2);
  auto s = make_scene(4);
  s.calib.pop_back();
  CHECK_THROWS_AS(model::fuse_level(s.coords, s.features, s.map, s.calib, {32, 32}, 2, block,
                                    nn::Mode{}),
                  ShapeMismatch);
  CHECK_THROWS_AS(model::parse_attention("pixels"), ConfigError);
}

TEST_CASE("fusion gradients match finite differences") {
  for (auto mode : {model::AttentionOver::kSamples, model::AttentionOver::kAggregated}) {
    nn::ParamStore<double> store(3);
    model::FusionBlock<double> block(store, "fusion", 4, 3, 2);
    // Non-zero offsets so the location gradient is exercised.
    auto w = block.offsets.weight;
    std::mt19937_64 rng(8);
    std::normal_distribution<double> n(0.0, 0.3);
    for (auto& v : w.mutable_value()) v = n(rng);
    auto s = make_scene(4);
    auto tensors = testing::all_params(store);
    tensors.push_back({"features", s.features});
    tensors.push_back({"map", s.map});
    const auto loss = [&] {
      const auto r = model::fuse_level(s.coords, s.features, s.map, s.calib, {32, 32}, 2, block,
                                       nn::Mode{}, mode);
      return testing::random_projection(r.fused, 5);
    };
    const auto r = testing::grad_check(tensors, loss, 1e-4, 8);
    INFO("worst tensor " << r.worst_tensor);
    CHECK(r.ok(1e-4));
  }
}
