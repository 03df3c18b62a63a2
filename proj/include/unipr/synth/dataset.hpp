// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "unipr/synth/raster.hpp"

namespace unipr::synth {

constexpr int kDatasetSchemaVersion = 1;

struct GenConfig {
  int width = 160, height = 120;
  double fx = 140, fy = 140;
  double baseline = 0.13;
  double d_min = 0.5, d_max = 2.0;
  int min_objects = 1, max_objects = 5;
  double scale_min = 0.05, scale_max = 0.25;
  double place_margin = 0.15;      // fraction of image kept clear at each border
  double max_overlap_iou = 0.2;    // pairwise bounding-sphere IoU cap
  int n_surface = 2048;
  int n_queries = 4096;
  double near_surface_sigma = 0.05;
  int min_visible_pixels = 50;

  geom::CameraRig rig() const;
  void validate() const;
};

struct ObjectAnnotation {
  std::string kind;
  Eigen::Vector3d position;      // bounding-sphere center, camera frame (m)
  double scale = 0;              // bounding-sphere radius (m)
  Eigen::Vector4d rotation_wxyz;
  geom::Points surface_points;   // pose-aware normalized, max norm 1
  geom::Points occ_queries;      // normalized frame
  std::vector<uint8_t> occ_labels;
  int mask_id = 0;
  bool visible = true;
  std::string difficulty;
};

struct SceneAnnotation {
  uint64_t seed = 0;
  geom::CameraRig rig;
  std::vector<ObjectAnnotation> objects;
};

/// Per-object encoder outputs cached beside the annotation.
struct GtLatents {
  uint64_t vae_hash = 0;
  std::vector<std::vector<double>> mu;      // one per annotated object
  std::vector<std::vector<double>> logvar;
};

struct SceneData {
  SceneSpec spec;
  SceneAnnotation annotation;
  StereoRender render;
};

/// Fully deterministic: (config, master_seed, index) -> scene. Placement
/// failures restart the scene from a fresh sub-seed (logged to stderr).
SceneData generate_scene(const GenConfig& cfg, int index, uint64_t master_seed);

std::string scene_dir_name(int index);

nlohmann::json annotation_to_json(const SceneAnnotation& ann);
SceneAnnotation annotation_from_json(const nlohmann::json& j);
nlohmann::json gen_config_to_json(const GenConfig& cfg);
GenConfig gen_config_from_json(const nlohmann::json& j);

/// Round to 9 significant decimal digits; annotation serialization contract.
double quantize9(double x);

class DatasetWriter {
 public:
  DatasetWriter(std::string root, const GenConfig& cfg, uint64_t master_seed);
  /// Atomic per scene: writes into a temp dir, then renames.
  void write_scene(int index, const SceneData& data);
  void finalize(int num_scenes);

 private:
  std::string root_;
  GenConfig cfg_;
  uint64_t seed_;
};

struct SceneRecord {
  std::string id;
  SceneAnnotation annotation;
  Image left, right, mask_left, mask_right;
  std::optional<GtLatents> latents;
};

class Dataset {
 public:
  static Dataset open(const std::string& root);

  int size() const { return num_scenes_; }
  uint64_t master_seed() const { return seed_; }
  const GenConfig& config() const { return cfg_; }
  const std::string& root() const { return root_; }

  std::string scene_id(int index) const;
  /// Lazy: reads one scene directory; errors carry the scene id.
  SceneRecord load_scene(int index) const;

  void write_latents(int index, const GtLatents& latents) const;

 private:
  std::string root_;
  GenConfig cfg_;
  uint64_t seed_ = 0;
  int num_scenes_ = 0;
};

}  // namespace unipr::synth
