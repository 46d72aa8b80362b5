#include "rvo/config.hpp"

#include <fstream>
#include <functional>
#include <map>

#include "rvo/errors.hpp"

namespace rvo {

namespace {

using nlohmann::json;

template <typename V>
void read_field(const json& j, const std::string& key, V& out) {
  try {
    out = j.get<V>();
  } catch (const json::exception& e) {
    throw ConfigError("config field '" + key + "': " + e.what());
  }
}

/// Applies every key of `j` through `fields`, rejecting keys it does not know.
void apply_strict(const json& j, const std::string& section,
                  const std::map<std::string, std::function<void(const json&)>>& fields) {
  if (!j.is_object()) throw ConfigError("config section '" + section + "' must be an object");
  for (const auto& [key, value] : j.items()) {
    auto it = fields.find(key);
    if (it == fields.end()) {
      throw ConfigError("unknown config key '" + (section.empty() ? key : section + "." + key) + "'");
    }
    it->second(value);
  }
}

#define RVO_FIELD(obj, name) \
  {#name, [&](const json& v) { read_field(v, #name, obj.name); }}

}  // namespace

void ModelConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw ConfigError("model." + field + ": " + why);
  };
  if (num_levels < 2 || num_levels > 6) fail("num_levels", "must be in [2, 6]");
  if (static_cast<int>(point_widths.size()) != num_levels) fail("point_widths", "one width per level");
  if (image_widths != point_widths) fail("image_widths", "must equal point_widths");
  if (num_points < (1 << num_levels) || num_points % (1 << num_levels) != 0) {
    fail("num_points", "must be a positive multiple of 2^num_levels");
  }
  for (int w : point_widths) {
    if (w <= 0) fail("point_widths", "widths must be positive");
    if (w % heads != 0) fail("heads", "must divide every level width");
  }
  if (group_k < 1) fail("group_k", "must be >= 1");
  if (deform_k < 1) fail("deform_k", "must be >= 1");
  if (heads < 1) fail("heads", "must be >= 1");
  if (cost_k1 < 1) fail("cost_k1", "must be >= 1");
  if (cost_k2 < 1) fail("cost_k2", "must be >= 1");
  if (embed_width < 1) fail("embed_width", "must be >= 1");
  if (conf_hidden < 1) fail("conf_hidden", "must be >= 1");
  if (head_hidden < 1) fail("head_hidden", "must be >= 1");
  if (final_pool != "max" && final_pool != "avg") fail("final_pool", "must be 'max' or 'avg'");
  if (attn_over != "samples" && attn_over != "aggregated") {
    fail("attn_over", "must be 'samples' or 'aggregated'");
  }
  const int div = 1 << num_levels;
  if (image_height < 32 || image_width < 32 || image_height % div || image_width % div) {
    fail("image_height/image_width", "must be >= 32 and divisible by 2^num_levels");
  }
  for (double s : image_std) {
    if (!(s > 0)) fail("image_std", "must be positive");
  }
  if (!(bn_momentum > 0 && bn_momentum <= 1)) fail("bn_momentum", "must be in (0, 1]");
}

void TrainConfig::validate(int num_levels) const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw ConfigError("train." + field + ": " + why);
  };
  if (!(lr > 0)) fail("lr", "must be positive");
  if (!(lr_decay > 0 && lr_decay <= 1)) fail("lr_decay", "must be in (0, 1]");
  if (decay_epochs < 1) fail("decay_epochs", "must be >= 1");
  if (decay_steps < 0) fail("decay_steps", "must be >= 0");
  if (epochs < 1) fail("epochs", "must be >= 1");
  if (batch_size < 1) fail("batch_size", "must be >= 1");
  if (steps < 0) fail("steps", "must be >= 0");
  if (static_cast<int>(lambda.size()) != num_levels) fail("lambda", "one weight per level");
  for (double l : lambda) {
    if (!(l >= 0)) fail("lambda", "weights must be non-negative");
  }
  if (!(grad_clip > 0)) fail("grad_clip", "must be positive");
  if (checkpoint_every < 0) fail("checkpoint_every", "must be >= 0");
}

void RunConfig::validate() const {
  model.validate();
  train.validate(model.num_levels);
}

RunConfig RunConfig::from_json(const json& j) {
  RunConfig c;
  ModelConfig& m = c.model;
  TrainConfig& t = c.train;
  const std::map<std::string, std::function<void(const json&)>> model_fields{
      RVO_FIELD(m, num_points),   RVO_FIELD(m, num_levels),      RVO_FIELD(m, point_widths),
      RVO_FIELD(m, image_widths), RVO_FIELD(m, group_k),         RVO_FIELD(m, final_pool),
      RVO_FIELD(m, deform_k),     RVO_FIELD(m, heads),           RVO_FIELD(m, attn_over),
      RVO_FIELD(m, cost_k1),      RVO_FIELD(m, cost_k2),         RVO_FIELD(m, embed_width),
      RVO_FIELD(m, conf_hidden),  RVO_FIELD(m, head_hidden),     RVO_FIELD(m, conf_uses_fused),
      RVO_FIELD(m, image_height), RVO_FIELD(m, image_width),     RVO_FIELD(m, image_mean),
      RVO_FIELD(m, image_std),    RVO_FIELD(m, bn_momentum),
  };
  const std::map<std::string, std::function<void(const json&)>> train_fields{
      RVO_FIELD(t, lr),         RVO_FIELD(t, lr_decay),         RVO_FIELD(t, decay_epochs),
      RVO_FIELD(t, decay_steps), RVO_FIELD(t, epochs),          RVO_FIELD(t, batch_size),
      RVO_FIELD(t, steps),      RVO_FIELD(t, lambda),           RVO_FIELD(t, s_e_init),
      RVO_FIELD(t, s_t_init),   RVO_FIELD(t, grad_clip),        RVO_FIELD(t, adam_beta1),
      RVO_FIELD(t, adam_beta2), RVO_FIELD(t, adam_eps),         RVO_FIELD(t, checkpoint_every),
      RVO_FIELD(t, normalize_images),
  };
  const std::map<std::string, std::function<void(const json&)>> top_fields{
      {"model", [&](const json& v) { apply_strict(v, "model", model_fields); }},
      {"train", [&](const json& v) { apply_strict(v, "train", train_fields); }},
      RVO_FIELD(c, seed),
      RVO_FIELD(c, deterministic),
      RVO_FIELD(c, data_root),
      RVO_FIELD(c, train_split),
      RVO_FIELD(c, val_split),
  };
  apply_strict(j, "", top_fields);
  c.validate();
  return c;
}

json RunConfig::to_json() const {
  const ModelConfig& m = model;
  const TrainConfig& t = train;
  json jm{{"num_points", m.num_points},     {"num_levels", m.num_levels},
          {"point_widths", m.point_widths}, {"image_widths", m.image_widths},
          {"group_k", m.group_k},           {"final_pool", m.final_pool},
          {"deform_k", m.deform_k},         {"heads", m.heads},
          {"attn_over", m.attn_over},       {"cost_k1", m.cost_k1},
          {"cost_k2", m.cost_k2},           {"embed_width", m.embed_width},
          {"conf_hidden", m.conf_hidden},   {"head_hidden", m.head_hidden},
          {"conf_uses_fused", m.conf_uses_fused}, {"image_height", m.image_height},
          {"image_width", m.image_width},   {"image_mean", m.image_mean},
          {"image_std", m.image_std},       {"bn_momentum", m.bn_momentum}};
  json jt{{"lr", t.lr},
          {"lr_decay", t.lr_decay},
          {"decay_epochs", t.decay_epochs},
          {"decay_steps", t.decay_steps},
          {"epochs", t.epochs},
          {"batch_size", t.batch_size},
          {"steps", t.steps},
          {"lambda", t.lambda},
          {"s_e_init", t.s_e_init},
          {"s_t_init", t.s_t_init},
          {"grad_clip", t.grad_clip},
          {"adam_beta1", t.adam_beta1},
          {"adam_beta2", t.adam_beta2},
          {"adam_eps", t.adam_eps},
          {"checkpoint_every", t.checkpoint_every},
          {"normalize_images", t.normalize_images}};
  return json{{"model", jm},
              {"train", jt},
              {"seed", seed},
              {"deterministic", deterministic},
              {"data_root", data_root},
              {"train_split", train_split},
              {"val_split", val_split}};
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  return from_json(j);
}

void RunConfig::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write config " + path.string());
  out << to_json().dump(2) << '\n';
}

}  // namespace rvo
