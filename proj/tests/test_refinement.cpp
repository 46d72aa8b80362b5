#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "rvo/data_io.hpp"
#include "rvo/errors.hpp"
#include "rvo/network.hpp"
#include "rvo/synthetic.hpp"
#include "rvo/trainer.hpp"
#include "support/testing.hpp"

using namespace rvo;
namespace fs = std::filesystem;

namespace {

model::ImageFrame random_image(int h, int w, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> u(0.f, 1.f);
  model::ImageFrame img{h, w, std::vector<float>(static_cast<size_t>(h * w * 3))};
  for (auto& v : img.pixels) v = u(rng);
  return img;
}

struct Batch {
  std::vector<model::ImageFrame> images;
  std::vector<model::PairInput<double>> pairs;
  std::vector<geometry::Pose> gt;
};

Batch random_batch(const ModelConfig& cfg, int size, uint64_t seed) {
  std::mt19937_64 rng(seed);
  Batch b;
  b.images.reserve(static_cast<size_t>(2 * size));
  for (int i = 0; i < 2 * size; ++i) b.images.push_back(random_image(cfg.image_height, cfg.image_width, rng));
  std::uniform_real_distribution<double> small(-0.05, 0.05);
  for (int i = 0; i < size; ++i) {
    model::PairInput<double> p;
    p.radar1 = testing::random_frame<double>(cfg.num_points, rng);
    p.radar2 = testing::random_frame<double>(cfg.num_points, rng);
    p.image1 = &b.images[2 * i];
    p.image2 = &b.images[2 * i + 1];
    p.calib = testing::front_camera(cfg.image_width, cfg.image_height);
    b.pairs.push_back(p);
    b.gt.push_back({{small(rng), small(rng), small(rng)}, {0.5 + small(rng), small(rng), small(rng)}});
  }
  return b;
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("rvo_refinement_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::vector<data::SequenceSample> synthetic_samples(const fs::path& root) {
  synth::SyntheticSceneConfig scene;
  scene.frames = 8;
  scene.static_points = 400;
  scene.seed = 3;
  synth::generate_synthetic(scene, root);
  return data::load_sequence(root, "train");
}

RunConfig small_run() {
  RunConfig cfg;
  cfg.model.num_points = 64;
  cfg.model.point_widths = {8, 8, 8, 8};
  cfg.model.image_widths = {8, 8, 8, 8};
  cfg.model.group_k = 8;
  cfg.model.deform_k = 4;
  cfg.model.heads = 2;
  cfg.model.embed_width = 8;
  cfg.model.conf_hidden = 8;
  cfg.model.head_hidden = 8;
  cfg.model.image_height = 64;
  cfg.model.image_width = 64;
  cfg.train.batch_size = 2;
  cfg.train.steps = 6;
  cfg.seed = 7;
  cfg.deterministic = true;
  return cfg;
}

geometry::Mat4 homogeneous(const ag::Var<double>& rotation, const ag::Var<double>& t, int64_t b) {
  geometry::Mat4 m = geometry::Mat4::Identity();
  for (int i = 0; i < 9; ++i) m(i / 3, i % 3) = rotation.at(b, i);
  for (int i = 0; i < 3; ++i) m(i, 3) = t.at(b, i);
  return m;
}

}  // namespace

TEST_CASE("level loss arithmetic") {
  CHECK(model::level_loss(1.0, 1.0, -2.5, 0.0) == doctest::Approx(std::exp(2.5) - 2.5 + 1.0));
  CHECK(model::level_loss(1.0, 1.0, -2.5, 0.0) == doctest::Approx(10.68).epsilon(1e-3));
  CHECK(model::level_loss(0.3, 0.7, 0.0, 0.0) == 0.3 + 0.7);
  CHECK(model::level_loss(0.0, 0.0, 0.0, 0.0) == 0.0);
  const std::vector<double> lambda{1, 2, 4, 8};
  CHECK(model::total_loss(std::vector<double>{1, 1, 1, 1}, lambda) == 15.0);
  CHECK(model::total_loss(std::vector<double>{0, 0, 0, 0}, lambda) == 0.0);
  CHECK(model::total_loss(std::vector<double>{0, 0, 0, 2}, lambda) == 16.0);
  CHECK_THROWS_AS(model::total_loss(std::vector<double>{1, 1}, lambda), ShapeMismatch);
}

TEST_CASE("tensor level loss matches the scalar formula") {
  nn::ParamStore<double> store(1);
  model::LossScalars<double> scalars(store, -2.5, 0.0);
  const auto pred_e = ag::Var<double>::constant({2, 3}, std::vector<double>{0, 0, 0, 0, 0, 0});
  const auto gt_e = ag::Var<double>::constant({2, 3}, std::vector<double>{1, 0, 0, 0, 0.6, 0.8});
  const auto pred_t = ag::Var<double>::constant({2, 3}, std::vector<double>{1, 1, 1, 0, 0, 0});
  const auto gt_t = ag::Var<double>::constant({2, 3}, std::vector<double>{1, 1, 1, 0, 0, 2});
  const auto l = model::level_loss(pred_e, pred_t, gt_e, gt_t, scalars);
  CHECK(l.item() == doctest::Approx(model::level_loss(1.0, 1.0, -2.5, 0.0)));
  const auto same = model::level_loss(gt_e, gt_t, gt_e, gt_t, scalars);
  CHECK(same.item() == doctest::Approx(-2.5));
}

TEST_CASE("refinement runs on 16, 32, 64 and 128 points for N = 256") {
  ModelConfig cfg;
  cfg.point_widths = {4, 4, 4, 4};
  cfg.image_widths = {4, 4, 4, 4};
  cfg.group_k = 8;
  cfg.deform_k = 2;
  cfg.heads = 1;
  cfg.embed_width = 4;
  cfg.conf_hidden = 4;
  cfg.head_hidden = 4;
  cfg.image_height = 32;
  cfg.image_width = 32;
  nn::ParamStore<double> store(1);
  model::OdometryNet<double> net(store, cfg);
  const auto batch = random_batch(cfg, 1, 2);
  const auto out = net.forward(batch.pairs, nn::Mode{false});
  REQUIRE(out.levels.size() == 4);
  const int64_t expect[] = {128, 64, 32, 16};
  for (int l = 0; l < 4; ++l) {
    CHECK(out.levels[l].level == l + 1);
    CHECK(out.levels[l].points_per_sample == expect[l]);
    CHECK(out.levels[l].confidence.rows() == expect[l]);
  }
}

TEST_CASE("zero residual heads reproduce the coarsest pose exactly") {
  const auto cfg = testing::micro_config();
  nn::ParamStore<double> store(4);
  model::OdometryNet<double> net(store, cfg);
  for (int l = 1; l < cfg.num_levels; ++l) {
    for (const std::string head : {"eula", "t"}) {
      for (const std::string p : {"weight", "bias"}) {
        auto v = store.param("level" + std::to_string(l) + ".pose." + head + ".out." + p);
        std::fill(v.mutable_value().begin(), v.mutable_value().end(), 0.0);
      }
    }
  }
  const auto batch = random_batch(cfg, 2, 5);
  const auto out = net.forward(batch.pairs, nn::Mode{});
  const auto& fine = out.levels.front();
  const auto& coarse = out.levels.back();
  for (int64_t i = 0; i < 6; ++i) {
    CHECK(fine.eula.value()[i] == coarse.eula.value()[i]);
    CHECK(fine.translation.value()[i] == coarse.translation.value()[i]);
  }
}

TEST_CASE("every level transition matches the homogeneous product") {
  const auto cfg = testing::micro_config();
  nn::ParamStore<double> store(6);
  model::OdometryNet<double> net(store, cfg);
  const auto batch = random_batch(cfg, 2, 7);
  const auto out = net.forward(batch.pairs, nn::Mode{});
  for (int l = 0; l + 1 < cfg.num_levels; ++l) {
    const auto& cur = out.levels[l];
    const auto& prev = out.levels[l + 1];
    const auto delta_r = model::euler_to_rotation(cur.delta_eula);
    for (int64_t b = 0; b < 2; ++b) {
      const geometry::Mat4 oracle =
          homogeneous(delta_r, cur.delta_translation, b) * homogeneous(prev.rotation, prev.translation, b);
      CHECK((homogeneous(cur.rotation, cur.translation, b) - oracle).cwiseAbs().maxCoeff() < 1e-6);
      const geometry::Mat3 from_eula = geometry::euler_to_rotation(cur.pose(b).eula);
      CHECK((from_eula - oracle.topLeftCorner<3, 3>()).cwiseAbs().maxCoeff() < 1e-6);
    }
  }
}

TEST_CASE("supervising only the coarsest level leaves finer pose heads without gradient") {
  const auto cfg = testing::micro_config();
  nn::ParamStore<double> store(8);
  model::OdometryNet<double> net(store, cfg);
  model::LossScalars<double> scalars(store, -2.5, 0.0);
  const auto batch = random_batch(cfg, 2, 9);
  store.zero_grad();
  const auto out = net.forward(batch.pairs, nn::Mode{});
  const std::vector<double> lambda{0.0, 8.0};
  ag::backward(model::network_loss(out, batch.gt, scalars, lambda).total);
  const auto norm = [](const ag::Var<double>& v) {
    double s = 0;
    for (double g : v.grad()) s += g * g;
    return std::sqrt(s);
  };
  for (const auto& [name, p] : store.params()) {
    if (name.rfind("level2.pose", 0) == 0 || name.rfind("level2.cost", 0) == 0) {
      CHECK_MESSAGE(norm(p) > 0.0, name);
    }
    if (name.rfind("level1.pose", 0) == 0) CHECK_MESSAGE(p.grad().empty(), name);
  }
  CHECK(norm(store.param("radar.level1.final.linear.weight")) > 0.0);
}

TEST_CASE("micro network gradients match finite differences") {
  const auto cfg = testing::micro_config();
  nn::ParamStore<double> store(10);
  model::OdometryNet<double> net(store, cfg);
  model::LossScalars<double> scalars(store, -2.5, 0.0);
  const auto batch = random_batch(cfg, 2, 11);
  const std::vector<double> lambda{1.0, 2.0};
  const auto loss = [&] {
    return model::network_loss(net.forward(batch.pairs, nn::Mode{}), batch.gt, scalars, lambda).total;
  };
  // Steps of 1e-4 already push some activations across ReLU kinks.
  const auto r = testing::grad_check(testing::all_params(store), loss, 1e-5, 4);
  INFO("worst tensor " << r.worst_tensor << " over " << r.checked << " entries");
  CHECK(r.ok(2e-4));
}

TEST_CASE("training moves the loss scalars and checkpoints them") {
  const auto root = scratch("scalars");
  const auto samples = synthetic_samples(root / "data");
  train::Trainer trainer(small_run(), samples);
  const float se0 = trainer.model().scalars.s_e.item();
  const float st0 = trainer.model().scalars.s_t.item();
  CHECK(se0 == -2.5f);
  CHECK(st0 == 0.0f);
  while (!trainer.finished()) {
    const auto rec = trainer.step();
    CHECK(std::isfinite(rec.total));
    CHECK(rec.levels.size() == 4);
  }
  CHECK(trainer.steps_done() == 6);
  const float se = trainer.model().scalars.s_e.item();
  CHECK(se != se0);
  CHECK(trainer.model().scalars.s_t.item() != st0);
  trainer.save_checkpoint(root / "ckpt.cbor");
  const auto loaded = train::load_model(root / "ckpt.cbor");
  CHECK(loaded->scalars.s_e.item() == se);
  CHECK(loaded->config.model.num_points == 64);
}

TEST_CASE("resuming from a checkpoint reproduces the next step bitwise") {
  const auto root = scratch("resume");
  const auto samples = synthetic_samples(root / "data");
  train::Trainer a(small_run(), samples);
  a.step();
  a.step();
  a.save_checkpoint(root / "step2.cbor");
  const auto next = a.step();

  train::Trainer b(small_run(), samples);
  b.load_checkpoint(root / "step2.cbor");
  CHECK(b.steps_done() == 2);
  const auto replay = b.step();
  CHECK(replay.total == next.total);
  CHECK(replay.levels == next.levels);
  CHECK(replay.s_e == next.s_e);

  auto other = small_run();
  other.model.embed_width = 16;
  train::Trainer c(other, samples);
  CHECK_THROWS_AS(c.load_checkpoint(root / "step2.cbor"), CheckpointError);
  CHECK_THROWS_AS(c.load_checkpoint(root / "missing.cbor"), CheckpointError);
}
