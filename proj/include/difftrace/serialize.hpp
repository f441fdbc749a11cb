#pragma once

// JSON documents for fields, attribute fields and cameras. Doubles are written in
// shortest round-trip form, so read(write(x)) is bit-equal.

#include <fstream>
#include <string>

#include <json.hpp>

#include "difftrace/camera.hpp"
#include "difftrace/field.hpp"

namespace difftrace {

using Json = nlohmann::json;

inline constexpr int kFieldFormatVersion = 1;
inline constexpr int kCameraFormatVersion = 1;

namespace detail {

inline Json vec_json(const Vec3& v) { return Json::array({v.x(), v.y(), v.z()}); }

inline Vec3 json_vec(const Json& j, const char* what) {
  if (!j.is_array() || j.size() != 3) throw ConfigError(std::string(what) + " must be a 3-element array");
  return Vec3(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
}

inline void check_header(const Json& j, const std::string& format, int version) {
  if (!j.is_object()) throw ConfigError("expected a JSON object for " + format);
  if (j.value("format", std::string()) != format) throw ConfigError("document is not a " + format + " file");
  const int v = j.value("version", -1);
  if (v != version) throw ConfigError(format + " version " + std::to_string(v) + " is not supported");
}

}  // namespace detail

inline Json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  try {
    return Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw IoError(path + ": JSON parse error at byte " + std::to_string(e.byte) + ": " + e.what());
  }
}

inline void write_json_file(const std::string& path, const Json& j) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << j.dump(1) << '\n';
  if (!out) throw IoError("write to '" + path + "' failed");
}

// --- networks -------------------------------------------------------------------

inline Json mlp_to_json(const Mlp& net) {
  Json layers = Json::array();
  for (const auto& l : net.layers) {
    layers.push_back({{"in", l.in}, {"out", l.out}, {"weight", l.weight}, {"bias", l.bias}});
  }
  return {{"hidden_activation", to_string(net.hidden)},
          {"head", to_string(net.head)},
          {"output_scale", net.output_scale},
          {"layers", layers}};
}

inline Mlp mlp_from_json(const Json& j) {
  Mlp net;
  net.hidden = activation_from_string(j.at("hidden_activation").get<std::string>());
  net.head = activation_from_string(j.at("head").get<std::string>());
  net.output_scale = j.at("output_scale").get<double>();
  for (const Json& lj : j.at("layers")) {
    DenseLayer l;
    l.in = lj.at("in").get<std::size_t>();
    l.out = lj.at("out").get<std::size_t>();
    l.weight = lj.at("weight").get<std::vector<double>>();
    l.bias = lj.at("bias").get<std::vector<double>>();
    if (l.weight.size() != l.in * l.out || l.bias.size() != l.out) throw ConfigError("layer weight shape mismatch");
    if (!net.layers.empty() && net.layers.back().out != l.in) throw ConfigError("consecutive layer widths disagree");
    net.layers.push_back(std::move(l));
  }
  if (net.layers.empty()) throw ConfigError("network has no layers");
  return net;
}

// --- analytic shapes ------------------------------------------------------------

inline Json analytic_to_json(const AnalyticField& f) {
  using K = AnalyticField::Kind;
  switch (f.kind()) {
    case K::sphere: return {{"kind", "sphere"}, {"center", detail::vec_json(f.center())}, {"radius", f.scalar()}};
    case K::box: return {{"kind", "box"}, {"center", detail::vec_json(f.center())}, {"half_extents", detail::vec_json(f.extent())}};
    case K::plane: return {{"kind", "plane"}, {"normal", detail::vec_json(f.extent())}, {"offset", f.scalar()}};
    case K::union_of: {
      Json children = Json::array();
      for (const auto& c : f.children()) children.push_back(analytic_to_json(c));
      return {{"kind", "union"}, {"children", children}};
    }
    case K::translate:
      return {{"kind", "translate"}, {"offset", detail::vec_json(f.center())}, {"child", analytic_to_json(f.children().front())}};
    case K::scale:
      return {{"kind", "scale"}, {"factor", f.scalar()}, {"child", analytic_to_json(f.children().front())}};
  }
  throw ConfigError("unknown analytic kind");
}

inline AnalyticField analytic_from_json(const Json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "sphere") return AnalyticField::sphere(detail::json_vec(j.at("center"), "center"), j.at("radius").get<double>());
  if (kind == "box") {
    return AnalyticField::box(detail::json_vec(j.at("center"), "center"), detail::json_vec(j.at("half_extents"), "half_extents"));
  }
  if (kind == "plane") return AnalyticField::plane(detail::json_vec(j.at("normal"), "normal"), j.at("offset").get<double>());
  if (kind == "union") {
    std::vector<AnalyticField> children;
    for (const Json& c : j.at("children")) children.push_back(analytic_from_json(c));
    return AnalyticField::union_of(std::move(children));
  }
  if (kind == "translate") {
    return AnalyticField::translated(analytic_from_json(j.at("child")), detail::json_vec(j.at("offset"), "offset"));
  }
  if (kind == "scale") return AnalyticField::scaled(analytic_from_json(j.at("child")), j.at("factor").get<double>());
  throw ConfigError("unknown analytic shape kind '" + kind + "'");
}

// --- fields ---------------------------------------------------------------------

inline Json field_to_json(const AnyField& field) {
  Json j = {{"format", "difftrace-field"}, {"version", kFieldFormatVersion}};
  if (const auto* a = std::get_if<AnalyticField>(&field)) {
    j["type"] = "analytic";
    j["shape"] = analytic_to_json(*a);
    return j;
  }
  const auto& n = std::get<NeuralField>(field);
  j["type"] = "neural";
  j["code_dim"] = n.code_dim();
  j["network"] = mlp_to_json(n.network());
  Json codes = Json::array();
  for (const auto& c : n.codes()) codes.push_back({{"name", c.name}, {"values", c.code.values}});
  j["codes"] = codes;
  return j;
}

inline AnyField field_from_json(const Json& j) {
  try {
    detail::check_header(j, "difftrace-field", kFieldFormatVersion);
    const std::string type = j.at("type").get<std::string>();
    if (type == "analytic") return analytic_from_json(j.at("shape"));
    if (type != "neural") throw ConfigError("unknown field type '" + type + "'");
    NeuralField f(j.at("code_dim").get<std::size_t>(), mlp_from_json(j.at("network")));
    for (const Json& c : j.value("codes", Json::array())) {
      LatentCode code(c.at("values").get<std::vector<double>>());
      if (code.size() != f.code_dim()) throw ConfigError("stored latent code has the wrong dimension");
      f.codes().push_back({c.at("name").get<std::string>(), std::move(code)});
    }
    return f;
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("field JSON: ") + e.what());
  }
}

inline void write_field(const std::string& path, const AnyField& field) { write_json_file(path, field_to_json(field)); }
inline AnyField read_field(const std::string& path) { return field_from_json(read_json_file(path)); }

inline Json attribute_to_json(const AttributeField& a) {
  return {{"format", "difftrace-attribute"},
          {"version", kFieldFormatVersion},
          {"shape_dim", a.shape_dim()},
          {"attr_dim", a.attr_dim()},
          {"network", mlp_to_json(a.network())}};
}

inline AttributeField attribute_from_json(const Json& j) {
  try {
    detail::check_header(j, "difftrace-attribute", kFieldFormatVersion);
    return AttributeField(j.at("shape_dim").get<std::size_t>(), j.at("attr_dim").get<std::size_t>(),
                          mlp_from_json(j.at("network")));
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("attribute JSON: ") + e.what());
  }
}

// --- cameras --------------------------------------------------------------------

/// Intrinsics plus the 3x4 world-to-camera matrix [R | t].
inline Json camera_to_json(const Intrinsics& intr, const Pose& pose) {
  Json in = {{"focal_mm", intr.focal_mm}, {"sensor_mm", intr.sensor_mm}, {"width", intr.width}, {"height", intr.height}};
  if (intr.cx_override) in["cx"] = *intr.cx_override;
  if (intr.cy_override) in["cy"] = *intr.cy_override;
  const Mat3 r = pose.rotation_matrix();
  Json ext = Json::array();
  for (int i = 0; i < 3; ++i) ext.push_back({r(i, 0), r(i, 1), r(i, 2), pose.translation[i]});
  return {{"format", "difftrace-camera"}, {"version", kCameraFormatVersion}, {"intrinsics", in}, {"extrinsic", ext}};
}

struct Camera {
  Intrinsics intrinsics;
  Pose pose;
};

inline Camera camera_from_json(const Json& j) {
  try {
    detail::check_header(j, "difftrace-camera", kCameraFormatVersion);
    Camera cam;
    const Json& in = j.at("intrinsics");
    cam.intrinsics.focal_mm = in.at("focal_mm").get<double>();
    cam.intrinsics.sensor_mm = in.at("sensor_mm").get<double>();
    cam.intrinsics.width = in.at("width").get<int>();
    cam.intrinsics.height = in.at("height").get<int>();
    if (in.contains("cx")) cam.intrinsics.cx_override = in.at("cx").get<double>();
    if (in.contains("cy")) cam.intrinsics.cy_override = in.at("cy").get<double>();
    cam.intrinsics.validate();
    const Json& ext = j.at("extrinsic");
    if (!ext.is_array() || ext.size() != 3) throw ConfigError("extrinsic must be a 3x4 matrix");
    Mat3 r;
    Vec3 t;
    for (int i = 0; i < 3; ++i) {
      const Json& row = ext[static_cast<std::size_t>(i)];
      if (!row.is_array() || row.size() != 4) throw ConfigError("extrinsic must be a 3x4 matrix");
      for (int k = 0; k < 3; ++k) r(i, k) = row[static_cast<std::size_t>(k)].get<double>();
      t[i] = row[3].get<double>();
    }
    if ((r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff() > 1e-6 || r.determinant() < 0.0) {
      throw ConfigError("extrinsic rotation is not a proper rotation");
    }
    cam.pose = Pose::from_matrix(r, t);
    return cam;
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("camera JSON: ") + e.what());
  }
}

inline void write_camera(const std::string& path, const Intrinsics& intr, const Pose& pose) {
  write_json_file(path, camera_to_json(intr, pose));
}
inline Camera read_camera(const std::string& path) { return camera_from_json(read_json_file(path)); }

}  // namespace difftrace
