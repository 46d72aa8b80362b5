#include "rvo/trainer.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include <json.hpp>

#include "rvo/errors.hpp"

namespace rvo::train {

namespace fs = std::filesystem;
using nlohmann::json;

std::vector<PreparedPair> prepare_pairs(const std::vector<data::SequenceSample>& samples,
                                        int num_points, uint64_t seed) {
  std::vector<PreparedPair> out;
  out.reserve(samples.size());
  for (const auto& s : samples) {
    PreparedPair p;
    p.sequence = s.first.sequence;
    p.index = s.first.index;
    p.gt = s.gt_relative;
    const uint64_t seed1 = data::frame_seed(seed, s.first.sequence, s.first.index);
    const uint64_t seed2 = data::frame_seed(seed, s.second.sequence, s.second.index);
    p.input.radar1 = data::sample_to_n<float>(s.first.radar.points, num_points, seed1);
    p.input.radar2 = data::sample_to_n<float>(s.second.radar.points, num_points, seed2);
    if (!s.first.dynamic.empty()) {
      for (int32_t i : data::sample_indices(s.first.radar.points.rows(), num_points, seed1)) {
        p.dynamic1.push_back(s.first.dynamic[i]);
      }
    }
    p.image1 = std::make_shared<model::ImageFrame>(s.first.image);
    p.image2 = std::make_shared<model::ImageFrame>(s.second.image);
    p.input.image1 = p.image1.get();
    p.input.image2 = p.image2.get();
    p.input.calib = s.calib;
    out.push_back(std::move(p));
  }
  return out;
}

void image_statistics(const std::vector<data::SequenceSample>& samples, std::array<double, 3>& mean,
                      std::array<double, 3>& stddev) {
  std::array<double, 3> sum{}, sq{};
  double count = 0.0;
  std::set<std::pair<std::string, int>> seen;
  auto add = [&](const data::Frame& f) {
    if (!seen.insert({f.sequence, f.index}).second) return;
    for (size_t i = 0; i < f.image.pixels.size(); ++i) {
      const double v = f.image.pixels[i];
      sum[i % 3] += v;
      sq[i % 3] += v * v;
    }
    count += static_cast<double>(f.image.pixels.size() / 3);
  };
  for (const auto& s : samples) {
    add(s.first);
    add(s.second);
  }
  if (count == 0.0) throw DataFormatError("image_statistics: no images");
  for (int c = 0; c < 3; ++c) {
    mean[c] = sum[c] / count;
    stddev[c] = std::max(std::sqrt(std::max(sq[c] / count - mean[c] * mean[c], 0.0)), 1e-3);
  }
}

Model::Model(const RunConfig& cfg)
    : config(cfg), store(std::make_unique<nn::ParamStore<float>>(cfg.seed)) {
  config.validate();
  net = std::make_unique<model::OdometryNet<float>>(*store, config.model);
  scalars = model::LossScalars<float>(*store, config.train.s_e_init, config.train.s_t_init);
}

namespace {

RunConfig with_image_stats(RunConfig config, const std::vector<data::SequenceSample>& samples) {
  if (config.train.normalize_images && !samples.empty()) {
    image_statistics(samples, config.model.image_mean, config.model.image_std);
  }
  return config;
}

json::binary_t to_binary(const std::vector<float>& v) {
  std::vector<uint8_t> bytes(v.size() * sizeof(float));
  std::memcpy(bytes.data(), v.data(), bytes.size());
  return json::binary_t(std::move(bytes));
}

std::vector<float> from_binary(const json& j, size_t expected, const std::string& what) {
  if (!j.is_binary()) throw CheckpointError("checkpoint entry '" + what + "' is not a binary blob");
  const auto& bytes = j.get_binary();
  if (bytes.size() != expected * sizeof(float)) {
    throw CheckpointError("checkpoint entry '" + what + "' has " +
                          std::to_string(bytes.size() / sizeof(float)) + " values, expected " +
                          std::to_string(expected));
  }
  std::vector<float> v(expected);
  std::memcpy(v.data(), bytes.data(), bytes.size());
  return v;
}

json read_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  std::vector<uint8_t> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  json j;
  try {
    j = json::from_cbor(bytes);
  } catch (const json::exception& e) {
    throw CheckpointError("cannot decode checkpoint " + path.string() + ": " + e.what());
  }
  if (j.value("format", "") != "rvo-checkpoint" || j.value("version", 0) != 1) {
    throw CheckpointError("checkpoint " + path.string() + " has an unknown format or version");
  }
  return j;
}

/// Copies stored parameters and buffers into `model`, which must have been
/// built from an identical model config.
void restore_tensors(Model& model, const json& ck) {
  const json& params = ck.at("params");
  auto& store = *model.store;
  if (params.size() != store.params().size()) {
    throw CheckpointError("checkpoint holds " + std::to_string(params.size()) +
                          " parameters, model has " + std::to_string(store.params().size()));
  }
  for (const auto& [name, var] : store.params()) {
    if (!params.contains(name)) throw CheckpointError("checkpoint lacks parameter " + name);
    const auto& entry = params.at(name);
    if (entry.at("shape").get<ag::Shape>() != var.shape()) {
      throw CheckpointError("checkpoint parameter " + name + " has a different shape");
    }
    auto values = from_binary(entry.at("data"), static_cast<size_t>(var.numel()), name);
    auto copy = var;
    std::copy(values.begin(), values.end(), copy.mutable_value().begin());
  }
  const json& buffers = ck.at("buffers");
  for (auto& [name, buf] : store.buffers()) {
    if (!buffers.contains(name)) throw CheckpointError("checkpoint lacks buffer " + name);
    buf = from_binary(buffers.at(name), buf.size(), name);
  }
}

}  // namespace

Trainer::Trainer(RunConfig config, const std::vector<data::SequenceSample>& samples)
    : model_(with_image_stats(std::move(config), samples)),
      pairs_(prepare_pairs(samples, model_.config.model.num_points, model_.config.seed)) {
  if (pairs_.empty()) throw DataFormatError("training set holds no pairs");
  for (const auto& [name, var] : model_.store->params()) {
    adam_m_[name].assign(static_cast<size_t>(var.numel()), 0.0f);
    adam_v_[name].assign(static_cast<size_t>(var.numel()), 0.0f);
  }
}

int64_t Trainer::batches_per_epoch() const {
  const auto n = static_cast<int64_t>(pairs_.size());
  return std::max<int64_t>(1, n / model_.config.train.batch_size);
}

int Trainer::epoch() const { return static_cast<int>(step_ / batches_per_epoch()); }

bool Trainer::finished() const {
  const auto& t = model_.config.train;
  return t.steps > 0 ? step_ >= t.steps : epoch() >= t.epochs;
}

double Trainer::learning_rate() const {
  const auto& t = model_.config.train;
  const int64_t periods = t.decay_steps > 0 ? step_ / t.decay_steps : epoch() / t.decay_epochs;
  return t.lr * std::pow(t.lr_decay, static_cast<double>(periods));
}

std::vector<size_t> Trainer::epoch_order(int e) const {
  std::vector<size_t> order(pairs_.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::mt19937_64 rng(model_.config.seed * 1000003ull + static_cast<uint64_t>(e) + 1);
  for (size_t i = order.size(); i > 1; --i) {
    std::uniform_int_distribution<size_t> pick(0, i - 1);
    std::swap(order[i - 1], order[pick(rng)]);
  }
  return order;
}

StepRecord Trainer::step() {
  const auto& cfg = model_.config;
  const int64_t per_epoch = batches_per_epoch();
  const auto order = epoch_order(epoch());
  const int64_t slot = step_ % per_epoch;
  const auto size = std::min<int64_t>(cfg.train.batch_size, static_cast<int64_t>(pairs_.size()));

  std::vector<model::PairInput<float>> batch;
  std::vector<geometry::Pose> gt;
  for (int64_t i = 0; i < size; ++i) {
    const auto& p = pairs_[order[static_cast<size_t>(slot * size + i)]];
    batch.push_back(p.input);
    gt.push_back(p.gt);
  }

  StepRecord rec;
  rec.lr = learning_rate();
  auto& store = *model_.store;
  store.zero_grad();
  const nn::Mode mode{true, cfg.model.bn_momentum};
  const auto out = model_.net->forward(batch, mode);
  const auto loss = model::network_loss(out, gt, model_.scalars, cfg.train.lambda);
  rec.total = static_cast<double>(loss.total.item());
  rec.levels = loss.levels;
  rec.step = step_ + 1;

  if (!std::isfinite(rec.total)) {
    json diag{{"step", rec.step}, {"total_loss", std::to_string(rec.total)},
              {"level_losses", json::array()}, {"s_e", model_.scalars.s_e.item()},
              {"s_t", model_.scalars.s_t.item()}, {"lr", rec.lr}};
    for (double l : rec.levels) diag["level_losses"].push_back(std::to_string(l));
    json norms = json::object();
    for (const auto& [name, var] : store.params()) {
      double s = 0.0;
      for (float v : var.value()) s += static_cast<double>(v) * v;
      norms[name] = std::sqrt(s);
    }
    diag["parameter_norms"] = norms;
    std::vector<std::string> batch_ids;
    for (int64_t i = 0; i < size; ++i) {
      const auto& p = pairs_[order[static_cast<size_t>(slot * size + i)]];
      batch_ids.push_back(p.sequence + "/" + data::frame_name(p.index));
    }
    diag["batch"] = batch_ids;
    fs::create_directories(diagnostics_dir_);
    const fs::path path = diagnostics_dir_ / ("nonfinite_step" + std::to_string(rec.step) + ".json");
    std::ofstream(path) << diag.dump(2) << '\n';
    throw NonFiniteLoss("non-finite loss at step " + std::to_string(rec.step) + "; diagnostics in " +
                        path.string());
  }

  ag::backward(loss.total);

  double norm2 = 0.0;
  for (const auto& [_, var] : store.params()) {
    for (float g : var.grad()) norm2 += static_cast<double>(g) * g;
  }
  const double norm = std::sqrt(norm2);
  const double clip = norm > cfg.train.grad_clip ? cfg.train.grad_clip / norm : 1.0;

  const double b1 = cfg.train.adam_beta1, b2 = cfg.train.adam_beta2, eps = cfg.train.adam_eps;
  const double t = static_cast<double>(step_ + 1);
  const double c1 = 1.0 - std::pow(b1, t), c2 = 1.0 - std::pow(b2, t);
  for (const auto& [name, var] : store.params()) {
    auto p = var;
    auto values = p.mutable_value();
    const auto grad = var.grad();
    auto& m = adam_m_.at(name);
    auto& v = adam_v_.at(name);
    for (size_t i = 0; i < values.size(); ++i) {
      const double g = grad.empty() ? 0.0 : grad[i] * clip;
      m[i] = static_cast<float>(b1 * m[i] + (1.0 - b1) * g);
      v[i] = static_cast<float>(b2 * v[i] + (1.0 - b2) * g * g);
      const double update = rec.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
      values[i] = static_cast<float>(values[i] - update);
    }
  }
  ++step_;
  rec.s_e = model_.scalars.s_e.item();
  rec.s_t = model_.scalars.s_t.item();
  return rec;
}

void Trainer::save_checkpoint(const fs::path& path) const {
  json ck{{"format", "rvo-checkpoint"}, {"version", 1}, {"config", model_.config.to_json()},
          {"step", step_},   {"epoch", epoch()},
          {"s_e", model_.scalars.s_e.item()}, {"s_t", model_.scalars.s_t.item()}};
  json params = json::object(), buffers = json::object(), m = json::object(), v = json::object();
  for (const auto& [name, var] : model_.store->params()) {
    params[name] = {{"shape", var.shape()},
                    {"data", to_binary(std::vector<float>(var.value().begin(), var.value().end()))}};
    m[name] = to_binary(adam_m_.at(name));
    v[name] = to_binary(adam_v_.at(name));
  }
  for (const auto& [name, buf] : std::as_const(*model_.store).buffers()) buffers[name] = to_binary(buf);
  ck["params"] = std::move(params);
  ck["buffers"] = std::move(buffers);
  ck["adam"] = {{"m", std::move(m)}, {"v", std::move(v)}};
  const auto bytes = json::to_cbor(ck);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  }
  fs::rename(tmp, path);
}

void Trainer::load_checkpoint(const fs::path& path) {
  const json ck = read_checkpoint(path);
  const RunConfig stored = RunConfig::from_json(ck.at("config"));
  if (stored.to_json().at("model") != model_.config.to_json().at("model")) {
    throw CheckpointError("checkpoint " + path.string() + " was built for a different model config");
  }
  try {
    restore_tensors(model_, ck);
    for (const auto& [name, var] : model_.store->params()) {
      adam_m_[name] = from_binary(ck.at("adam").at("m").at(name), static_cast<size_t>(var.numel()), name);
      adam_v_[name] = from_binary(ck.at("adam").at("v").at(name), static_cast<size_t>(var.numel()), name);
    }
    step_ = ck.at("step").get<int64_t>();
  } catch (const json::exception& e) {
    throw CheckpointError("malformed checkpoint " + path.string() + ": " + e.what());
  }
}

std::unique_ptr<Model> load_model(const fs::path& path) {
  const json ck = read_checkpoint(path);
  RunConfig cfg;
  try {
    cfg = RunConfig::from_json(ck.at("config"));
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("checkpoint config is invalid: ") + e.what());
  }
  auto model = std::make_unique<Model>(cfg);
  try {
    restore_tensors(*model, ck);
  } catch (const json::exception& e) {
    throw CheckpointError("malformed checkpoint " + path.string() + ": " + e.what());
  }
  return model;
}

std::string log_header(int num_levels) {
  std::string h = "step,total_loss";
  for (int l = 1; l <= num_levels; ++l) h += ",L" + std::to_string(l);
  return h + ",s_e,s_t,lr";
}

std::string log_row(const StepRecord& r) {
  std::ostringstream s;
  s.precision(9);
  s << r.step << ',' << r.total;
  for (double l : r.levels) s << ',' << l;
  s << ',' << r.s_e << ',' << r.s_t << ',' << r.lr;
  return s.str();
}

void run_training(Trainer& trainer, const fs::path& out, const fs::path& resume) {
  fs::create_directories(out);
  trainer.set_diagnostics_dir(out);
  const fs::path log_path = out / "train_log.csv";
  std::vector<std::string> kept;
  if (!resume.empty()) {
    trainer.load_checkpoint(resume);
    // Keep the log rows up to the resumed step so the log stays contiguous.
    std::ifstream old(log_path);
    std::string line;
    if (std::getline(old, line)) {
      while (std::getline(old, line)) {
        if (std::stoll(line.substr(0, line.find(','))) <= trainer.steps_done()) kept.push_back(line);
      }
    }
    spdlog::info("resumed from {} at step {} (epoch {})", resume.string(), trainer.steps_done(),
                 trainer.epoch());
  }
  trainer.config().save(out / "config.json");
  std::ofstream log(log_path);
  log << log_header(trainer.config().model.num_levels) << '\n';
  for (const auto& line : kept) log << line << '\n';
  const int every = trainer.config().train.checkpoint_every;
  while (!trainer.finished()) {
    const auto rec = trainer.step();
    log << log_row(rec) << '\n';
    log.flush();
    if (rec.step % 10 == 0 || rec.step == 1) {
      spdlog::info("step {} loss {:.5f} s_e {:.4f} s_t {:.4f} lr {:.2e}", rec.step, rec.total,
                   rec.s_e, rec.s_t, rec.lr);
    }
    if (every > 0 && rec.step % every == 0) {
      trainer.save_checkpoint(out / ("checkpoint_step" + std::to_string(rec.step) + ".cbor"));
    }
  }
  trainer.save_checkpoint(out / "checkpoint.cbor");
}

std::vector<PairPrediction> predict(const Model& model, const std::vector<PreparedPair>& pairs,
                                    int batch) {
  ag::NoGradGuard guard;
  const nn::Mode mode{false, model.config.model.bn_momentum};
  std::vector<PairPrediction> out;
  for (size_t begin = 0; begin < pairs.size(); begin += static_cast<size_t>(batch)) {
    const size_t end = std::min(pairs.size(), begin + static_cast<size_t>(batch));
    std::vector<model::PairInput<float>> inputs;
    for (size_t i = begin; i < end; ++i) inputs.push_back(pairs[i].input);
    const auto result = model.net->forward(inputs, mode);
    for (size_t s = 0; s < inputs.size(); ++s) {
      PairPrediction p;
      for (const auto& level : result.levels) {
        p.levels.push_back(level.pose(s));
        const int64_t n = level.points_per_sample;
        const auto conf = level.confidence.value();
        p.confidence.emplace_back(conf.begin() + static_cast<std::ptrdiff_t>(s * n),
                                  conf.begin() + static_cast<std::ptrdiff_t>((s + 1) * n));
        p.coords.push_back(level.coords[s]);
        p.rrv.push_back(level.rrv[s]);
      }
      out.push_back(std::move(p));
    }
  }
  return out;
}

}  // namespace rvo::train
