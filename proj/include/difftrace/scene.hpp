#pragma once

// Scene files for the command-line tools. Every relative path inside a scene is
// resolved against the scene file's directory.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "difftrace/inverse.hpp"
#include "difftrace/serialize.hpp"

namespace difftrace {

inline constexpr int kSceneFormatVersion = 1;

struct OrbitSpec {
  std::size_t count = 8;
  double radius = 2.2;
  double phase = 0.3;
};

struct TextureSpec {
  std::uint64_t seed = 7;
  double frequency = 4.0;
  std::size_t waves = 16;
};

struct PerturbSpec {
  double degrees = 5.0;
  double translation = 0.05;
};

struct FitSpec {
  std::vector<std::string> names;
  std::vector<AnalyticField> shapes;
  FitConfig config;
};

struct ObservationFiles {
  std::string depth;       // PFM
  std::string silhouette;  // PGM
  std::string normal;      // PNG
};

struct SceneConfig {
  std::filesystem::path base;  // directory of the scene file
  std::optional<AnyField> field;
  Json code;         // name, vector or null
  Json target_code;  // ground truth for completion / mvs
  std::vector<Camera> cameras;
  std::optional<OrbitSpec> orbit;
  Intrinsics orbit_intrinsics;
  TraceConfig trace;
  bool trace_k_set = false;  // drivers pick their own K otherwise
  LossWeights weights;
  std::size_t iterations = 100;
  double lr = 1e-2;
  double lr_final_fraction = 1.0;
  std::size_t views_per_iter = 8;
  ObservationFiles observations;
  std::size_t sparse_pixels = 0;  // 0 keeps dense depth
  bool use_silhouette = true;
  bool use_normals = false;
  PerturbSpec perturb;
  std::optional<TextureSpec> texture;
  std::optional<FitSpec> fit;
  std::size_t chamfer_points = 4000;
  std::string output = "out";
};

namespace detail {

inline std::string resolve(const std::filesystem::path& base, const std::string& p) {
  if (p.empty()) return p;
  const std::filesystem::path path(p);
  return path.is_absolute() ? p : (base / path).string();
}

template <class T>
void read_opt(const Json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

inline void reject_unknown(const Json& j, std::initializer_list<const char*> keys, const std::string& where) {
  for (const auto& [k, v] : j.items()) {
    bool known = false;
    for (const char* key : keys) known = known || k == key;
    if (!known) throw ConfigError(where + ": unknown key '" + k + "'");
  }
}

inline TraceConfig trace_from_json(const Json& j, TraceConfig t) {
  reject_unknown(j, {"alpha", "epsilon", "max_steps", "k_samples", "coarse_start_scale", "split_interval", "normal_delta", "dynamic"},
                 "trace");
  read_opt(j, "alpha", t.alpha);
  read_opt(j, "epsilon", t.epsilon);
  read_opt(j, "max_steps", t.max_steps);
  read_opt(j, "k_samples", t.k_samples);
  read_opt(j, "coarse_start_scale", t.coarse_start_scale);
  read_opt(j, "split_interval", t.split_interval);
  read_opt(j, "normal_delta", t.normal_delta);
  read_opt(j, "dynamic", t.dynamic);
  t.validate();
  return t;
}

inline Json trace_to_json(const TraceConfig& t) {
  return {{"alpha", t.alpha},         {"epsilon", t.epsilon},
          {"max_steps", t.max_steps}, {"k_samples", t.k_samples},
          {"coarse_start_scale", t.coarse_start_scale}, {"split_interval", t.split_interval},
          {"normal_delta", t.normal_delta}, {"dynamic", t.dynamic}};
}

inline LossWeights weights_from_json(const Json& j, LossWeights w) {
  reject_unknown(j, {"depth", "silhouette", "normal", "photometric", "reg"}, "weights");
  read_opt(j, "depth", w.depth);
  read_opt(j, "silhouette", w.silhouette);
  read_opt(j, "normal", w.normal);
  read_opt(j, "photometric", w.photometric);
  read_opt(j, "reg", w.reg);
  w.validate();
  return w;
}

inline Camera camera_entry(const Json& j, const std::filesystem::path& base) {
  if (j.is_string()) return read_camera(resolve(base, j.get<std::string>()));
  return camera_from_json(j);
}

inline FitSpec fit_from_json(const Json& j) {
  reject_unknown(j, {"shapes", "code_dim", "hidden", "epochs", "samples", "batch_size", "lr", "max_validation_error"}, "fit");
  FitSpec f;
  f.config.arch.code_dim = 2;
  f.config.epochs = 20;
  for (const Json& s : j.at("shapes")) {
    f.names.push_back(s.value("name", "shape" + std::to_string(f.names.size())));
    f.shapes.push_back(analytic_from_json(s.at("shape")));
  }
  if (f.shapes.empty()) throw ConfigError("fit: no shapes listed");
  read_opt(j, "code_dim", f.config.arch.code_dim);
  read_opt(j, "hidden", f.config.arch.hidden);
  read_opt(j, "epochs", f.config.epochs);
  read_opt(j, "samples", f.config.samples);
  read_opt(j, "batch_size", f.config.batch_size);
  read_opt(j, "lr", f.config.lr);
  read_opt(j, "max_validation_error", f.config.max_validation_error);
  return f;
}

}  // namespace detail

inline SceneConfig scene_from_json(const Json& j, const std::filesystem::path& base) {
  try {
    detail::check_header(j, "difftrace-scene", kSceneFormatVersion);
    detail::reject_unknown(j, {"format", "version", "field", "code", "target_code", "camera", "cameras", "orbit", "trace",
                               "weights", "optimize", "observations", "sparse_pixels", "use_silhouette", "use_normals",
                               "perturb", "texture", "fit", "chamfer_points", "output"},
                           "scene");
    SceneConfig s;
    s.base = base;
    if (j.contains("field")) {
      const Json& f = j.at("field");
      s.field = f.is_string() ? read_field(detail::resolve(base, f.get<std::string>())) : field_from_json(f);
    }
    s.code = j.value("code", Json());
    s.target_code = j.value("target_code", Json());
    if (j.contains("camera")) s.cameras.push_back(detail::camera_entry(j.at("camera"), base));
    for (const Json& c : j.value("cameras", Json::array())) s.cameras.push_back(detail::camera_entry(c, base));
    if (j.contains("orbit")) {
      const Json& o = j.at("orbit");
      detail::reject_unknown(o, {"count", "radius", "phase", "intrinsics"}, "orbit");
      OrbitSpec spec;
      detail::read_opt(o, "count", spec.count);
      detail::read_opt(o, "radius", spec.radius);
      detail::read_opt(o, "phase", spec.phase);
      if (o.contains("intrinsics")) {
        const Json& in = o.at("intrinsics");
        detail::read_opt(in, "focal_mm", s.orbit_intrinsics.focal_mm);
        detail::read_opt(in, "sensor_mm", s.orbit_intrinsics.sensor_mm);
        detail::read_opt(in, "width", s.orbit_intrinsics.width);
        detail::read_opt(in, "height", s.orbit_intrinsics.height);
      }
      s.orbit_intrinsics.validate();
      s.orbit = spec;
    }
    if (j.contains("trace")) {
      s.trace = detail::trace_from_json(j.at("trace"), s.trace);
      s.trace_k_set = j.at("trace").contains("k_samples");
    }
    if (j.contains("weights")) s.weights = detail::weights_from_json(j.at("weights"), s.weights);
    if (j.contains("optimize")) {
      const Json& o = j.at("optimize");
      detail::reject_unknown(o, {"iterations", "lr", "lr_final_fraction", "views_per_iter"}, "optimize");
      detail::read_opt(o, "iterations", s.iterations);
      detail::read_opt(o, "lr", s.lr);
      detail::read_opt(o, "lr_final_fraction", s.lr_final_fraction);
      detail::read_opt(o, "views_per_iter", s.views_per_iter);
      if (!(s.lr > 0.0) || !(s.lr_final_fraction > 0.0 && s.lr_final_fraction <= 1.0)) {
        throw ConfigError("optimize: lr must be positive and lr_final_fraction in (0, 1]");
      }
    }
    if (j.contains("observations")) {
      const Json& o = j.at("observations");
      detail::reject_unknown(o, {"depth", "silhouette", "normal"}, "observations");
      s.observations.depth = detail::resolve(base, o.value("depth", std::string()));
      s.observations.silhouette = detail::resolve(base, o.value("silhouette", std::string()));
      s.observations.normal = detail::resolve(base, o.value("normal", std::string()));
    }
    detail::read_opt(j, "sparse_pixels", s.sparse_pixels);
    detail::read_opt(j, "use_silhouette", s.use_silhouette);
    detail::read_opt(j, "use_normals", s.use_normals);
    if (j.contains("perturb")) {
      detail::read_opt(j.at("perturb"), "degrees", s.perturb.degrees);
      detail::read_opt(j.at("perturb"), "translation", s.perturb.translation);
    }
    if (j.contains("texture")) {
      TextureSpec t;
      detail::read_opt(j.at("texture"), "seed", t.seed);
      detail::read_opt(j.at("texture"), "frequency", t.frequency);
      detail::read_opt(j.at("texture"), "waves", t.waves);
      s.texture = t;
    }
    if (j.contains("fit")) s.fit = detail::fit_from_json(j.at("fit"));
    detail::read_opt(j, "chamfer_points", s.chamfer_points);
    if (j.contains("output")) s.output = detail::resolve(base, j.at("output").get<std::string>());
    return s;
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("scene JSON: ") + e.what());
  }
}

inline SceneConfig read_scene(const std::string& path) {
  const std::filesystem::path p(path);
  return scene_from_json(read_json_file(path), p.has_parent_path() ? p.parent_path() : std::filesystem::path("."));
}

/// Looks up a code by name in a neural field, or takes an inline vector. Null means
/// the zero code (the family mean); analytic fields take no code.
inline std::vector<double> resolve_code(const AnyField& field, const Json& spec) {
  if (std::holds_alternative<AnalyticField>(field)) {
    if (!spec.is_null() && !(spec.is_array() && spec.empty())) throw ConfigError("analytic fields take no latent code");
    return {};
  }
  const auto& n = std::get<NeuralField>(field);
  if (spec.is_null()) return std::vector<double>(n.code_dim(), 0.0);
  if (spec.is_string()) return n.code(spec.get<std::string>()).values;
  auto v = spec.get<std::vector<double>>();
  if (v.size() != n.code_dim()) throw ConfigError("latent code has the wrong dimension");
  return v;
}

inline std::size_t field_code_dim(const AnyField& f) {
  return std::visit([](const auto& x) { return x.code_dim(); }, f);
}

/// Cameras of the scene, with --res applied (0 leaves them as stored).
inline std::vector<Camera> scene_cameras(const SceneConfig& s, int res = 0) {
  std::vector<Camera> cams = s.cameras;
  if (s.orbit) {
    for (const Pose& p : orbit_poses(s.orbit->count, s.orbit->radius, s.orbit->phase)) {
      cams.push_back({s.orbit_intrinsics, p});
    }
  }
  if (cams.empty()) throw ConfigError("scene lists no camera");
  if (res < 0) throw ConfigError("--res must be positive");
  for (Camera& c : cams) {
    if (res > 0) c.intrinsics.width = c.intrinsics.height = res;
    c.intrinsics.validate();
  }
  return cams;
}

inline const AnyField& scene_field(const SceneConfig& s) {
  if (!s.field) throw ConfigError("scene has no field");
  return *s.field;
}

}  // namespace difftrace
