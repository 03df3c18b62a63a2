// SPDX-License-Identifier: Apache-2.0
#include "unipr/harness/config.hpp"

#include <cstdlib>
#include <fstream>

#include <nlohmann/json.hpp>

namespace unipr::harness {

using nlohmann::json;

namespace {

json train_to_json(const TrainSection& t) {
  return {{"steps", t.steps},
          {"epochs", t.epochs},
          {"batch", t.batch},
          {"lr", t.lr},
          {"lr_min", t.lr_min},
          {"weight_decay", t.weight_decay},
          {"clip_norm", t.clip_norm},
          {"warmup_steps", t.warmup_steps},
          {"checkpoint_every", t.checkpoint_every},
          {"log_every", t.log_every},
          {"workers", t.workers},
          {"kl_weight", t.kl_weight},
          {"queries_per_step", t.queries_per_step},
          {"rotation_augment", t.rotation_augment},
          {"max_pool_objects", t.max_pool_objects}};
}

TrainSection train_from_json(const json& j) {
  TrainSection t;
  t.steps = j.at("steps");
  t.epochs = j.at("epochs");
  t.batch = j.at("batch");
  t.lr = j.at("lr");
  t.lr_min = j.at("lr_min");
  t.weight_decay = j.at("weight_decay");
  t.clip_norm = j.at("clip_norm");
  t.warmup_steps = j.at("warmup_steps");
  t.checkpoint_every = j.at("checkpoint_every");
  t.log_every = j.at("log_every");
  t.workers = j.at("workers");
  t.kl_weight = j.at("kl_weight");
  t.queries_per_step = j.at("queries_per_step");
  t.rotation_augment = j.at("rotation_augment");
  t.max_pool_objects = j.at("max_pool_objects");
  return t;
}

// recursive unknown-key / type check against the defaults document
void check_schema(const json& user, const json& schema, const std::string& path) {
  if (!user.is_object()) {
    if (user.type() != schema.type() &&
        !(user.is_number() && schema.is_number()))  // int/float interchange
      throw ConfigError("config: type mismatch at " + path);
    return;
  }
  if (!schema.is_object()) throw ConfigError("config: unexpected object at " + path);
  for (auto it = user.begin(); it != user.end(); ++it) {
    if (!schema.contains(it.key()))
      throw ConfigError("config: unknown key '" + path + it.key() + "'");
    check_schema(it.value(), schema.at(it.key()), path + it.key() + ".");
  }
}

json merge(const json& base, const json& overlay) {
  json out = base;
  for (auto it = overlay.begin(); it != overlay.end(); ++it) {
    if (it->is_object() && base.contains(it.key()) && base.at(it.key()).is_object())
      out[it.key()] = merge(base.at(it.key()), *it);
    else
      out[it.key()] = *it;
  }
  return out;
}

}  // namespace

json run_config_to_json(const RunConfig& c) {
  return {
      {"seed", c.seed},
      {"device", c.device},
      {"out_dir", c.out_dir},
      {"data",
       {{"root", c.data.root},
        {"val_root", c.data.val_root},
        {"num_scenes", c.data.num_scenes},
        {"val_scenes", c.data.val_scenes},
        {"gen", synth::gen_config_to_json(c.data.gen)}}},
      {"vae",
       {{"n_surface", c.vae.n_surface},
        {"c", c.vae.c},
        {"c_kl", c.vae.c_kl},
        {"encoder_blocks", c.vae.encoder_blocks},
        {"decoder_blocks", c.vae.decoder_blocks},
        {"pos_freq", c.vae.pos_freq},
        {"heads", c.vae.heads},
        {"point_tokens", c.vae.point_tokens},
        {"ffn_mult", c.vae.ffn_mult},
        {"train", train_to_json(c.vae_train)}}},
      {"tpv",
       {{"d_bins", c.tpv.d_bins},
        {"d_min", c.tpv.d_min},
        {"d_max", c.tpv.d_max},
        {"c", c.tpv.c},
        {"n_layers", c.tpv.n_layers},
        {"heads", c.tpv.heads},
        {"ref_points_per_cell", c.tpv.ref_points_per_cell},
        {"stride", c.tpv.stride},
        {"stage_channels", {c.tpv.stage_channels[0], c.tpv.stage_channels[1], c.tpv.stage_channels[2]}},
        {"ffn_mult", c.tpv.ffn_mult}}},
      {"detector",
       {{"n_queries", c.detector.n_queries},
        {"n_layers", c.detector.n_layers},
        {"heads", c.detector.heads},
        {"ffn_mult", c.detector.ffn_mult},
        {"confidence_threshold", c.detector.confidence_threshold},
        {"train", train_to_json(c.det_train)}}},
      {"loss",
       {{"w_pos", c.loss.w_pos},
        {"w_scale", c.loss.w_scale},
        {"w_conf", c.loss.w_conf},
        {"lambda_shape", c.loss.lambda_shape},
        {"lambda_conf", c.loss.lambda_conf},
        {"unmatched_conf_weight", c.loss.unmatched_conf_weight},
        {"match_with_shape", c.loss.match_with_shape}}},
      {"eval",
       {{"iou_threshold", c.eval.iou_threshold},
        {"recon_resolution", c.eval.recon_resolution},
        {"penalty_chamfer", c.eval.penalty_chamfer},
        {"top_k", c.eval.top_k},
        {"fscore_tau", c.eval.fscore_tau}}}};
}

RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  c.seed = j.at("seed").get<uint64_t>();
  c.device = j.at("device").get<std::string>();
  c.out_dir = j.at("out_dir").get<std::string>();
  const json& d = j.at("data");
  c.data.root = d.at("root");
  c.data.val_root = d.at("val_root");
  c.data.num_scenes = d.at("num_scenes");
  c.data.val_scenes = d.at("val_scenes");
  c.data.gen = synth::gen_config_from_json(d.at("gen"));
  const json& v = j.at("vae");
  c.vae.n_surface = v.at("n_surface");
  c.vae.c = v.at("c");
  c.vae.c_kl = v.at("c_kl");
  c.vae.encoder_blocks = v.at("encoder_blocks");
  c.vae.decoder_blocks = v.at("decoder_blocks");
  c.vae.pos_freq = v.at("pos_freq");
  c.vae.heads = v.at("heads");
  c.vae.point_tokens = v.at("point_tokens");
  c.vae.ffn_mult = v.at("ffn_mult");
  c.vae_train = train_from_json(v.at("train"));
  const json& t = j.at("tpv");
  c.tpv.d_bins = t.at("d_bins");
  c.tpv.d_min = t.at("d_min");
  c.tpv.d_max = t.at("d_max");
  c.tpv.c = t.at("c");
  c.tpv.n_layers = t.at("n_layers");
  c.tpv.heads = t.at("heads");
  c.tpv.ref_points_per_cell = t.at("ref_points_per_cell");
  c.tpv.stride = t.at("stride");
  for (int i = 0; i < 3; ++i) c.tpv.stage_channels[i] = t.at("stage_channels")[i];
  c.tpv.ffn_mult = t.at("ffn_mult");
  const json& dt = j.at("detector");
  c.detector.n_queries = dt.at("n_queries");
  c.detector.n_layers = dt.at("n_layers");
  c.detector.heads = dt.at("heads");
  c.detector.ffn_mult = dt.at("ffn_mult");
  c.detector.confidence_threshold = dt.at("confidence_threshold");
  c.detector.c_kl = c.vae.c_kl;  // latent width is owned by the VAE section
  c.det_train = train_from_json(dt.at("train"));
  const json& l = j.at("loss");
  c.loss.w_pos = l.at("w_pos");
  c.loss.w_scale = l.at("w_scale");
  c.loss.w_conf = l.at("w_conf");
  c.loss.lambda_shape = l.at("lambda_shape");
  c.loss.lambda_conf = l.at("lambda_conf");
  c.loss.unmatched_conf_weight = l.at("unmatched_conf_weight");
  c.loss.match_with_shape = l.at("match_with_shape");
  const json& e = j.at("eval");
  c.eval.iou_threshold = e.at("iou_threshold");
  c.eval.recon_resolution = e.at("recon_resolution");
  c.eval.penalty_chamfer = e.at("penalty_chamfer");
  c.eval.top_k = e.at("top_k");
  c.eval.fscore_tau = e.at("fscore_tau");
  return c;
}

void RunConfig::validate() const {
  if (device != "cpu") throw ConfigError("config: unsupported device '" + device + "' (cpu only)");
  try {
    data.gen.validate();
    vae.validate();
    tpv.validate();
    detector.validate();
    loss.validate();
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  if (data.num_scenes < 1 || data.val_scenes < 0) throw ConfigError("config: bad scene counts");
  if (vae_train.batch < 1 || det_train.batch < 1 || vae_train.workers < 1 || det_train.workers < 1)
    throw ConfigError("config: bad batch/worker counts");
  if (detector.c_kl != vae.c_kl) throw ConfigError("config: detector/vae latent width mismatch");
  if (eval.iou_threshold <= 0 || eval.iou_threshold >= 1)
    throw ConfigError("config: iou_threshold must be in (0,1)");
  if (eval.recon_resolution < 8) throw ConfigError("config: recon_resolution must be >= 8");
}

uint64_t RunConfig::config_hash() const {
  const std::string dump = run_config_to_json(*this).dump();
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : dump) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

RunConfig run_config_from_text(const std::string& text) {
  json user;
  try {
    user = json::parse(text);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config: parse error: ") + e.what());
  }
  const json defaults = run_config_to_json(RunConfig{});
  check_schema(user, defaults, "");
  RunConfig cfg = run_config_from_json(merge(defaults, user));
  if (const char* seed = std::getenv("RUN_SEED")) cfg.seed = std::strtoull(seed, nullptr, 10);
  if (const char* device = std::getenv("RUN_DEVICE")) cfg.device = device;
  cfg.validate();
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("config: cannot open " + path);
  std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return run_config_from_text(text);
}

}  // namespace unipr::harness
