#include "rvo/network.hpp"

#include <algorithm>
#include <cmath>

#include "rvo/errors.hpp"

namespace rvo::model {

template <typename T>
ag::Var<T> euler_to_rotation(const ag::Var<T>& eula) {
  if (eula.cols() != 3) throw ShapeMismatch("euler_to_rotation: expected B x 3");
  const auto a = ag::slice_cols(eula, 0, 1);
  const auto b = ag::slice_cols(eula, 1, 2);
  const auto c = ag::slice_cols(eula, 2, 3);
  const auto ca = ag::cos(a), sa = ag::sin(a);
  const auto cb = ag::cos(b), sb = ag::sin(b);
  const auto cc = ag::cos(c), sc = ag::sin(c);
  const auto sb_sc = ag::mul(sb, sc);
  const auto sb_cc = ag::mul(sb, cc);
  return ag::concat_cols<T>({
      ag::mul(ca, cb),
      ag::sub(ag::mul(ca, sb_sc), ag::mul(sa, cc)),
      ag::add(ag::mul(ca, sb_cc), ag::mul(sa, sc)),
      ag::mul(sa, cb),
      ag::add(ag::mul(sa, sb_sc), ag::mul(ca, cc)),
      ag::sub(ag::mul(sa, sb_cc), ag::mul(ca, sc)),
      ag::neg(sb),
      ag::mul(cb, sc),
      ag::mul(cb, cc),
  });
}

template <typename T>
ag::Var<T> rotation_to_euler(const ag::Var<T>& r) {
  if (r.cols() != 9) throw ShapeMismatch("rotation_to_euler: expected B x 9");
  auto at = [&](int i) { return ag::slice_cols(r, i, i + 1); };
  return ag::concat_cols<T>({ag::atan2(at(3), at(0)), ag::asin(ag::neg(at(6))),
                             ag::atan2(at(7), at(8))});
}

template <typename T>
geometry::Pose LevelPrediction<T>::pose(size_t s) const {
  geometry::Pose p;
  for (int d = 0; d < 3; ++d) {
    p.eula[d] = static_cast<double>(eula.at(static_cast<int64_t>(s), d));
    p.t[d] = static_cast<double>(translation.at(static_cast<int64_t>(s), d));
  }
  return p;
}

template <typename T>
OdometryNet<T>::OdometryNet(nn::ParamStore<T>& store, const ModelConfig& config)
    : config_((config.validate(), config)),
      points_(store, "radar", config),
      images_(store, "image", config),
      attention_(parse_attention(config.attn_over)) {
  for (int l = 0; l < config.num_levels; ++l) {
    const std::string prefix = "level" + std::to_string(l + 1);
    const int64_t c = config.point_widths[l];
    const int64_t e = config.embed_width;
    const bool coarsest = l == config.num_levels - 1;
    fusion_.emplace_back(store, prefix + ".fusion", c, config.deform_k, config.heads);
    cost_.emplace_back(store, prefix + ".cost", 2 * c, e, config.cost_k1, config.cost_k2);
    const int64_t conf_in = (config.conf_uses_fused ? 2 * c : c) + 2 + (coarsest ? 0 : 1);
    confidence_.emplace_back(store, prefix + ".confidence", conf_in, config.conf_hidden);
    merge_.push_back(coarsest ? nn::LBR<T>() : nn::LBR<T>(store, prefix + ".merge", 2 * e, e));
    pose_.emplace_back(store, prefix + ".pose", e, config.head_hidden, !coarsest);
  }
}

namespace {

template <typename T>
ag::Var<T> constant_rows(const std::vector<T>& values, int64_t cols) {
  return ag::Var<T>::constant({static_cast<int64_t>(values.size()) / cols, cols}, values);
}

/// Interpolates per-point values of the coarser PC1 onto the finer PC1.
template <typename T>
ag::Var<T> interpolate(const ag::Var<T>& coarse_values, const std::vector<geometry::Points<T>>& coarse,
                       const std::vector<geometry::Points<T>>& fine) {
  const int64_t nc = coarse[0].rows();
  const int64_t nf = fine[0].rows();
  const int64_t k = std::min<int64_t>(pc::kInterpolationK, nc);
  ag::Index idx;
  std::vector<T> w;
  idx.reserve(fine.size() * static_cast<size_t>(nf * k));
  w.reserve(idx.capacity());
  for (size_t b = 0; b < fine.size(); ++b) {
    const auto iw = pc::interpolation_weights(coarse[b], fine[b], k);
    for (int64_t i = 0; i < nf; ++i) {
      for (int64_t j = 0; j < k; ++j) {
        idx.push_back(static_cast<int32_t>(static_cast<int64_t>(b) * nc + iw.idx(i, j)));
        w.push_back(iw.weights(i, j));
      }
    }
  }
  return ag::group_sum(ag::mul_col(ag::gather_rows(coarse_values, idx), constant_rows(w, 1)), k);
}

}  // namespace

template <typename T>
NetworkOutput<T> OdometryNet<T>::forward(const std::vector<PairInput<T>>& batch,
                                         const nn::Mode& mode) const {
  if (batch.empty()) throw ShapeMismatch("OdometryNet: empty batch");
  const auto b_count = static_cast<int64_t>(batch.size());
  const int levels = config_.num_levels;

  std::vector<pc::Matrix<T>> radar;
  std::vector<const ImageFrame*> frames;
  std::vector<geometry::Calibration> calib;
  radar.reserve(2 * batch.size());
  for (int pass = 0; pass < 2; ++pass) {
    for (const auto& p : batch) {
      radar.push_back(pass == 0 ? p.radar1 : p.radar2);
      const ImageFrame* img = pass == 0 ? p.image1 : p.image2;
      if (img == nullptr) throw ShapeMismatch("OdometryNet: missing image");
      if (img->height != config_.image_height || img->width != config_.image_width) {
        throw ShapeError("OdometryNet: image is " + std::to_string(img->height) + "x" +
                         std::to_string(img->width) + " but the model expects " +
                         std::to_string(config_.image_height) + "x" +
                         std::to_string(config_.image_width));
      }
      frames.push_back(img);
      calib.push_back(p.calib);
    }
  }

  const auto pyramid = points_.forward(radar, mode);
  const auto maps =
      images_.forward(ImageBackbone<T>::pack(frames, config_.image_mean, config_.image_std), mode);
  const geometry::ImageSize size{config_.image_width, config_.image_height};

  struct LevelInputs {
    int64_t n = 0;
    std::vector<geometry::Points<T>> pc1;
    ag::Var<T> pc2;
    ag::Var<T> fused1, fused2, point1;
    ag::Var<T> velocity;
    std::vector<std::vector<T>> rrv;
  };
  std::vector<LevelInputs> inputs(static_cast<size_t>(levels));
  for (int l = 0; l < levels; ++l) {
    const auto& level = pyramid.levels[l];
    const int64_t n = level.points_per_sample;
    std::vector<geometry::Points<T>> coords;
    for (size_t s = 0; s < level.batch(); ++s) coords.push_back(level.coords(s));
    const auto fusion = fuse_level(coords, level.features, maps[l], calib, size, l + 1, fusion_[l],
                                   mode, attention_);
    auto& in = inputs[l];
    in.n = n;
    in.pc1.assign(coords.begin(), coords.begin() + b_count);
    in.pc2 = ag::slice_rows(level.coords_var(), b_count * n, 2 * b_count * n);
    in.fused1 = ag::slice_rows(fusion.fused, 0, b_count * n);
    in.fused2 = ag::slice_rows(fusion.fused, b_count * n, 2 * b_count * n);
    in.point1 = config_.conf_uses_fused ? in.fused1 : ag::slice_rows(level.features, 0, b_count * n);
    std::vector<T> velocity;
    for (int64_t s = 0; s < b_count; ++s) {
      std::vector<T> rrv(static_cast<size_t>(n));
      for (int64_t i = 0; i < n; ++i) rrv[i] = level.raw5[s](i, 3);
      const auto v = velocity_feature(rrv);
      velocity.insert(velocity.end(), v.begin(), v.end());
      in.rrv.push_back(std::move(rrv));
    }
    in.velocity = constant_rows(velocity, 2);
  }

  NetworkOutput<T> out;
  out.levels.resize(static_cast<size_t>(levels));
  for (int l = levels - 1; l >= 0; --l) {
    const auto& in = inputs[l];
    auto& pred = out.levels[l];
    pred.level = l + 1;
    pred.points_per_sample = in.n;
    pred.coords = in.pc1;
    pred.rrv = in.rrv;
    if (l == levels - 1) {
      const auto cv = cost_volume(in.pc1, in.fused1, in.pc2, in.fused2, cost_[l], mode);
      pred.embedding = cv.embedding;
      pred.confidence = estimate_confidence(in.point1, in.velocity, ag::Var<T>(), confidence_[l], mode);
      const auto pose = regress_pose(pred.embedding, pred.confidence, in.n, pose_[l]);
      pred.delta_eula = pose.eula;
      pred.delta_translation = pose.translation;
      pred.rotation = euler_to_rotation(pose.eula);
      pred.translation = pose.translation;
    } else {
      const auto& prev = out.levels[l + 1];
      const auto e_knn = interpolate(prev.embedding, prev.coords, in.pc1);
      const auto c_knn = interpolate(prev.confidence, prev.coords, in.pc1);
      ag::Index sample(static_cast<size_t>(b_count * in.n));
      for (size_t i = 0; i < sample.size(); ++i) {
        sample[i] = static_cast<int32_t>(static_cast<int64_t>(i) / in.n);
      }
      const auto warped = ag::transform_points(in.pc2, prev.rotation, prev.translation, sample);
      const auto cv = cost_volume(in.pc1, in.fused1, warped, in.fused2, cost_[l], mode);
      pred.embedding = merge_[l](ag::concat_cols<T>({e_knn, cv.embedding}), mode);
      pred.confidence = estimate_confidence(in.point1, in.velocity, c_knn, confidence_[l], mode);
      const auto delta = regress_pose(pred.embedding, pred.confidence, in.n, pose_[l]);
      pred.delta_eula = delta.eula;
      pred.delta_translation = delta.translation;
      const auto delta_rotation = euler_to_rotation(delta.eula);
      pred.rotation = ag::mat3_mul(delta_rotation, prev.rotation);
      pred.translation = ag::add(ag::mat3_vec(delta_rotation, prev.translation), delta.translation);
    }
    // Every level reads its angles back from the composed rotation, so a zero
    // residual reproduces the coarser angles bit for bit.
    pred.eula = rotation_to_euler(pred.rotation);
  }
  return out;
}

template <typename T>
LossScalars<T>::LossScalars(nn::ParamStore<T>& store, double s_e_init, double s_t_init) {
  s_e = store.add("loss.s_e", {1, 1}, nn::Init::kZeros);
  s_t = store.add("loss.s_t", {1, 1}, nn::Init::kZeros);
  s_e.mutable_value()[0] = static_cast<T>(s_e_init);
  s_t.mutable_value()[0] = static_cast<T>(s_t_init);
}

template <typename T>
ag::Var<T> level_loss(const ag::Var<T>& eula, const ag::Var<T>& translation,
                      const ag::Var<T>& gt_eula, const ag::Var<T>& gt_translation,
                      const LossScalars<T>& scalars) {
  const auto l_e = ag::mean_all(ag::row_norm(ag::sub(gt_eula, eula)));
  const auto l_t = ag::mean_all(ag::row_norm(ag::sub(gt_translation, translation)));
  const auto weighted_e = ag::add(ag::mul(l_e, ag::exp(ag::neg(scalars.s_e))), scalars.s_e);
  const auto weighted_t = ag::add(ag::mul(l_t, ag::exp(ag::neg(scalars.s_t))), scalars.s_t);
  return ag::add(weighted_e, weighted_t);
}

template <typename T>
LossBreakdown<T> network_loss(const NetworkOutput<T>& output, const std::vector<geometry::Pose>& gt,
                              const LossScalars<T>& scalars, std::span<const double> lambda) {
  if (lambda.size() != output.levels.size()) {
    throw ShapeMismatch("network_loss: one lambda per level required");
  }
  const auto b = static_cast<int64_t>(gt.size());
  std::vector<T> ge, gtr;
  for (const auto& p : gt) {
    for (int d = 0; d < 3; ++d) {
      ge.push_back(static_cast<T>(p.eula[d]));
      gtr.push_back(static_cast<T>(p.t[d]));
    }
  }
  const auto gt_eula = ag::Var<T>::constant({b, 3}, std::move(ge));
  const auto gt_t = ag::Var<T>::constant({b, 3}, std::move(gtr));
  LossBreakdown<T> out;
  for (size_t l = 0; l < lambda.size(); ++l) {
    const auto& pred = output.levels[l];
    if (pred.eula.rows() != b) throw ShapeMismatch("network_loss: ground truth count differs from batch");
    const auto term = level_loss(pred.eula, pred.translation, gt_eula, gt_t, scalars);
    out.levels.push_back(static_cast<double>(term.item()));
    if (lambda[l] == 0.0) continue;
    const auto scaled = ag::scale(term, static_cast<T>(lambda[l]));
    out.total = out.total.defined() ? ag::add(out.total, scaled) : scaled;
  }
  if (!out.total.defined()) out.total = ag::Var<T>::constant({1, 1}, T(0));
  return out;
}

double level_loss(double l_e, double l_t, double s_e, double s_t) {
  return l_e * std::exp(-s_e) + s_e + l_t * std::exp(-s_t) + s_t;
}

double total_loss(std::span<const double> level_losses, std::span<const double> lambda) {
  if (level_losses.size() != lambda.size()) {
    throw ShapeMismatch("total_loss: one lambda per level required");
  }
  double total = 0.0;
  for (size_t i = 0; i < lambda.size(); ++i) total += lambda[i] * level_losses[i];
  return total;
}

template ag::Var<float> euler_to_rotation<float>(const ag::Var<float>&);
template ag::Var<double> euler_to_rotation<double>(const ag::Var<double>&);
template ag::Var<float> rotation_to_euler<float>(const ag::Var<float>&);
template ag::Var<double> rotation_to_euler<double>(const ag::Var<double>&);
template struct LevelPrediction<float>;
template struct LevelPrediction<double>;
template class OdometryNet<float>;
template class OdometryNet<double>;
template struct LossScalars<float>;
template struct LossScalars<double>;
template ag::Var<float> level_loss<float>(const ag::Var<float>&, const ag::Var<float>&,
                                          const ag::Var<float>&, const ag::Var<float>&,
                                          const LossScalars<float>&);
template ag::Var<double> level_loss<double>(const ag::Var<double>&, const ag::Var<double>&,
                                            const ag::Var<double>&, const ag::Var<double>&,
                                            const LossScalars<double>&);
template LossBreakdown<float> network_loss<float>(const NetworkOutput<float>&,
                                                  const std::vector<geometry::Pose>&,
                                                  const LossScalars<float>&,
                                                  std::span<const double>);
template LossBreakdown<double> network_loss<double>(const NetworkOutput<double>&,
                                                    const std::vector<geometry::Pose>&,
                                                    const LossScalars<double>&,
                                                    std::span<const double>);

}  // namespace rvo::model
