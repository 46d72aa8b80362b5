#include <doctest.h>

#include <algorithm>
#include <numeric>

#include "rvo/confidence_pose.hpp"
#include "rvo/errors.hpp"
#include "support/testing.hpp"

using namespace rvo;

namespace {

ag::Var<double> random_matrix(int64_t rows, int64_t cols, uint64_t seed, bool param = true) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> v(static_cast<size_t>(rows * cols));
  for (auto& x : v) x = n(rng);
  return param ? ag::Var<double>::parameter({rows, cols}, v) : ag::Var<double>::constant({rows, cols}, v);
}

void randomize(nn::ParamStore<double>& store, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 0.5);
  for (auto [name, p] : store.params())
    for (auto& v : p.mutable_value()) v = n(rng);
}

}  // namespace

TEST_CASE("velocity feature uses the lower median of |rrv|") {
  const auto odd = model::velocity_feature<double>({-3.0, 1.0, 2.0});
  CHECK(odd == std::vector<double>{3.0, 1.0, 1.0, 1.0, 2.0, 0.0});
  const auto even = model::velocity_feature<double>({4.0, -1.0, 2.0, 0.5});
  // Sorted magnitudes 0.5, 1, 2, 4: the lower median is 1.
  CHECK(even == std::vector<double>{4.0, 3.0, 1.0, 0.0, 2.0, 1.0, 0.5, 0.5});
  CHECK(model::velocity_feature<double>({}).empty());
}

TEST_CASE("confidence starts at one half and stays in (0, 1)") {
  nn::ParamStore<double> store(1);
  model::ConfidenceBlock<double> block(store, "conf", 6, 8);
  const auto f = random_matrix(10, 4, 2, false), v = random_matrix(10, 2, 3, false);
  const auto c0 = model::estimate_confidence(f, v, {}, block, nn::Mode{});
  for (double x : c0.value()) CHECK(x == 0.5);
  randomize(store, 4);
  const auto scaled = ag::scale(f, 50.0);
  const auto c1 = model::estimate_confidence(scaled, v, {}, block, nn::Mode{false});
  for (double x : c1.value()) {
    CHECK(x > 0.0);
    CHECK(x < 1.0);
  }
}

TEST_CASE("identical inputs get identical confidence in evaluation mode") {
  nn::ParamStore<double> store(1);
  model::ConfidenceBlock<double> block(store, "conf", 7, 8);
  randomize(store, 5);
  auto f = random_matrix(6, 4, 6, false);
  std::vector<double> fv(f.value().begin(), f.value().end());
  std::copy(fv.begin(), fv.begin() + 4, fv.begin() + 20);  // row 5 = row 0
  const auto f2 = ag::Var<double>::constant({6, 4}, fv);
  auto vel = random_matrix(6, 2, 7, false);
  std::vector<double> vv(vel.value().begin(), vel.value().end());
  vv[10] = vv[0];
  vv[11] = vv[1];
  auto prior = random_matrix(6, 1, 8, false);
  std::vector<double> pv(prior.value().begin(), prior.value().end());
  pv[5] = pv[0];
  const auto c = model::estimate_confidence(f2, ag::Var<double>::constant({6, 2}, vv),
                                            ag::Var<double>::constant({6, 1}, pv), block,
                                            nn::Mode{false});
  CHECK(c.at(5, 0) == c.at(0, 0));
  CHECK_THROWS_AS(model::estimate_confidence(f2, ag::Var<double>::constant({6, 2}, vv), {}, block,
                                             nn::Mode{false}),
                  ShapeMismatch);
}

TEST_CASE("pose regression pools the confidence-weighted embedding") {
  nn::ParamStore<double> store(1);
  model::PoseRegressor<double> reg(store, "pose", 3, 5);
  randomize(store, 9);
  const auto e = random_matrix(8, 3, 10, false);
  const auto zero = ag::Var<double>::constant({8, 1}, 0.0);
  const auto out0 = model::regress_pose(e, zero, 4, reg);
  CHECK(out0.eula.shape() == ag::Shape{2, 3});
  // C = 0 leaves only the head biases.
  const auto bias_only = reg.eula(ag::Var<double>::constant({1, 3}, 0.0));
  for (int b = 0; b < 2; ++b)
    for (int d = 0; d < 3; ++d) CHECK(out0.eula.at(b, d) == doctest::Approx(bias_only.at(0, d)));

  // Scaling C by kappa scales the pooled feature by kappa.
  const auto c = ag::sigmoid(random_matrix(8, 1, 11, false));
  const auto p1 = model::regress_pose(e, c, 4, reg).pooled;
  const auto p3 = model::regress_pose(e, ag::scale(c, 3.0), 4, reg).pooled;
  for (int64_t i = 0; i < p1.numel(); ++i) CHECK(p3.value()[i] == doctest::Approx(3.0 * p1.value()[i]));

  // Pooled value matches a hand mean for sample 1.
  for (int d = 0; d < 3; ++d) {
    double s = 0;
    for (int i = 4; i < 8; ++i) s += c.at(i, 0) * e.at(i, d);
    CHECK(p1.at(1, d) == doctest::Approx(s / 4.0));
  }
  CHECK_THROWS_AS(model::regress_pose(e, c, 3, reg), ShapeMismatch);
}

TEST_CASE("pose does not depend on point order within a sample") {
  nn::ParamStore<double> store(1);
  model::PoseRegressor<double> reg(store, "pose", 3, 5);
  model::ConfidenceBlock<double> conf(store, "conf", 5, 6);
  randomize(store, 12);
  const auto e = random_matrix(6, 3, 13, false), v = random_matrix(6, 2, 14, false);
  std::vector<int32_t> perm{2, 0, 1, 5, 3, 4};
  const nn::Mode eval{false};
  const auto run = [&](const ag::Var<double>& ee, const ag::Var<double>& vv) {
    const auto c = model::estimate_confidence(ee, vv, {}, conf, eval);
    return model::regress_pose(ee, c, 3, reg);
  };
  const auto a = run(e, v);
  const auto b = run(ag::gather_rows(e, perm), ag::gather_rows(v, perm));
  for (int64_t i = 0; i < 6; ++i) {
    CHECK(std::abs(a.eula.value()[i] - b.eula.value()[i]) < 1e-6);
    CHECK(std::abs(a.translation.value()[i] - b.translation.value()[i]) < 1e-6);
  }
}

TEST_CASE("confidence and pose gradients match finite differences") {
  nn::ParamStore<double> store(1);
  model::PoseRegressor<double> reg(store, "pose", 3, 5);
  model::ConfidenceBlock<double> conf(store, "conf", 6, 6);
  randomize(store, 15);
  const auto e = random_matrix(8, 3, 16), v = random_matrix(8, 2, 17), prior = random_matrix(8, 1, 18);
  auto tensors = testing::all_params(store);
  tensors.push_back({"embedding", e});
  tensors.push_back({"prior", prior});
  const auto loss = [&] {
    const auto c = model::estimate_confidence(e, v, prior, conf, nn::Mode{});
    const auto out = model::regress_pose(e, c, 4, reg);
    return ag::add(testing::random_projection(out.eula, 1), testing::random_projection(out.translation, 2));
  };
  const auto r = testing::grad_check(tensors, loss, 1e-4, 8);
  INFO("worst tensor " << r.worst_tensor);
  CHECK(r.ok(1e-4));
}
