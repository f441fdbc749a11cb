#include <catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "difftrace/difftrace.hpp"

using namespace difftrace;
using Catch::Approx;
namespace fs = std::filesystem;

namespace {

std::string scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "difftrace_test_io";
  fs::create_directories(dir);
  return (dir / name).string();
}

void write_bytes(const std::string& path, const std::string& bytes) {
  std::ofstream(path, std::ios::binary) << bytes;
}

Intrinsics square(int res) {
  Intrinsics in;
  in.width = in.height = res;
  return in;
}

}  // namespace

TEST_CASE("depth PFM round trip") {
  const auto s = AnalyticField::sphere(Vec3::Zero(), 0.5);
  const TraceResult r = trace(s, {}, square(32), Pose::look_at(Vec3(0, 0, -2), Vec3::Zero()), TraceConfig{});
  const auto depth = depth_map(r);
  const std::string path = scratch("depth.pfm");
  write_depth_pfm(path, depth, 32, 32);
  const Image back = read_depth_pfm(path);
  REQUIRE(back.pixels() == depth.size());
  for (std::size_t i = 0; i < depth.size(); ++i) {
    if (std::isfinite(depth[i])) {
      CHECK(std::abs(back.data[i] - depth[i]) < 1e-6);
    } else {
      CHECK(std::isinf(back.data[i]));
    }
  }
  // the raw file stores background as 0
  CHECK(read_pfm(path).data[0] == 0.0);

  const std::vector<double> empty(16, kBackgroundDepth);
  write_depth_pfm(scratch("empty.pfm"), empty, 4, 4);
  for (double v : read_pfm(scratch("empty.pfm")).data) CHECK(v == 0.0);
  CHECK_THROWS_AS(write_depth_pfm(path, empty, 3, 3), ConfigError);
}

TEST_CASE("malformed headers name the byte offset") {
  const std::string pgm = scratch("bad.pgm");
  write_bytes(pgm, "P5\n4 x4\n255\n0000000000000000");
  try {
    read_pgm(pgm);
    FAIL("expected an IoError");
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find("at byte 5") != std::string::npos);
  }
  const std::string pfm = scratch("bad.pfm");
  write_bytes(pfm, "PX\n1 1\n-1\n0000");
  CHECK_THROWS_AS(read_pfm(pfm), IoError);
  write_bytes(pgm, "P5\n4 4\n255\n00");
  CHECK_THROWS_AS(read_pgm(pgm), IoError);  // truncated
  CHECK_THROWS_AS(read_pgm(scratch("missing.pgm")), IoError);
}

TEST_CASE("silhouette PGM round trip") {
  const std::vector<std::uint8_t> mask{1, 0, 0, 1, 1, 0};
  write_mask_pgm(scratch("sil.pgm"), mask, 3, 2);
  const Image img = read_pgm(scratch("sil.pgm"));
  CHECK(img.width == 3);
  CHECK(img.data == std::vector<double>{1, 0, 0, 1, 1, 0});
}

TEST_CASE("plane normals encode to one PNG color") {
  const Vec3 n = Vec3(0.3, -0.2, -1).normalized();
  const auto plane = AnalyticField::plane(n, -0.2);
  const TraceResult r = trace(plane, {}, square(16), Pose::look_at(Vec3(0, 0, -2), Vec3::Zero()), TraceConfig{});
  const NormalImage nm = normal_map(r, plane, {}, 1e-3);
  write_png(scratch("normal.png"), encode_normals(nm.normal, nm.valid, 16, 16));
  const Image img = read_png(scratch("normal.png"));
  REQUIRE(img.channels == 3);
  std::vector<Vec3> decoded;
  std::vector<std::uint8_t> valid;
  decode_normals(img, decoded, valid);
  std::size_t count = 0;
  for (std::size_t i = 0; i < img.pixels(); ++i) {
    if (!nm.valid[i]) continue;
    ++count;
    for (int c = 0; c < 3; ++c) CHECK(img.data[3 * i + c] == img.data[3 * static_cast<std::size_t>(std::find(nm.valid.begin(), nm.valid.end(), 1) - nm.valid.begin()) + c]);
    CHECK(valid[i]);
    CHECK((decoded[i] - n).norm() < 0.02);  // 8-bit quantization
  }
  CHECK(count > 100);
}

TEST_CASE("field JSON round trips exactly") {
  FitConfig cfg;
  cfg.arch.code_dim = 2;
  cfg.arch.hidden = {8, 8};
  cfg.epochs = 1;
  cfg.samples = 500;
  cfg.validation_samples = 100;
  FitResult fit = fit_family({AnalyticField::sphere(Vec3::Zero(), 0.3), AnalyticField::sphere(Vec3::Zero(), 0.5)}, cfg);
  const AnyField field = fit.field;
  write_field(scratch("field.json"), field);
  const AnyField back = read_field(scratch("field.json"));
  CHECK(field_to_json(back) == field_to_json(field));
  const auto& a = std::get<NeuralField>(field);
  const auto& b = std::get<NeuralField>(back);
  std::mt19937_64 rng(1);
  std::vector<Vec3> pts(200);
  for (Vec3& p : pts) p = sample_unit_ball(rng);
  CHECK(a.eval(pts, fit.codes[1].values) == b.eval(pts, fit.codes[1].values));

  const AnyField u = AnalyticField::union_of(
      {AnalyticField::sphere(Vec3(0.1, 0, 0), 0.3), AnalyticField::box(Vec3(-0.2, 0, 0), Vec3(0.1, 0.2, 0.3))});
  CHECK(field_to_json(field_from_json(field_to_json(u))) == field_to_json(u));

  Json bad = field_to_json(u);
  bad["version"] = 99;
  CHECK_THROWS_AS(field_from_json(bad), ConfigError);
}

TEST_CASE("camera JSON round trip") {
  Intrinsics in = square(48);
  in.focal_mm = 35.0;
  const Pose pose = Pose::look_at(Vec3(0.4, -0.3, -2.1), Vec3(0.05, 0, 0));
  write_camera(scratch("camera.json"), in, pose);
  const Camera cam = read_camera(scratch("camera.json"));
  CHECK(cam.intrinsics.width == 48);
  CHECK(cam.intrinsics.focal_mm == 35.0);
  CHECK((cam.pose.rotation_matrix() - pose.rotation_matrix()).norm() < 1e-12);
  CHECK((cam.pose.translation - pose.translation).norm() == 0.0);
  const Json j = read_json_file(scratch("camera.json"));
  CHECK(j.at("extrinsic").size() == 3);
  CHECK(j.at("extrinsic")[0].size() == 4);
}

TEST_CASE("scene files") {
  const std::string dir = DIFFTRACE_SCENES;
  const SceneConfig s = read_scene(dir + "/blobs.json");
  REQUIRE(s.field);
  CHECK(std::holds_alternative<AnalyticField>(*s.field));
  CHECK(scene_cameras(s).size() == 1);
  CHECK(scene_cameras(s, 32)[0].intrinsics.width == 32);
  CHECK(s.iterations == 200);

  const SceneConfig m = read_scene(dir + "/mvs.json");
  CHECK(scene_cameras(m).size() == 8);
  CHECK(resolve_code(*m.field, m.target_code).size() == 2);

  Json bogus = {{"format", "difftrace-scene"}, {"version", 1}, {"colour", 1}};
  CHECK_THROWS_AS(scene_from_json(bogus, "."), ConfigError);
  Json nocam = {{"format", "difftrace-scene"}, {"version", 1}};
  CHECK_THROWS_AS(scene_cameras(scene_from_json(nocam, ".")), ConfigError);
}
