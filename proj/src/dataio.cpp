// SPDX-License-Identifier: Apache-2.0
#include "spfuse/dataio.hpp"

#include <cstdio>

#include <json.hpp>

namespace spfuse {

using detail::ByteReader;
using detail::ByteWriter;
using nlohmann::json;

void Dataset::validate() const {
  if (n_classes < 2) throw ValidationError("dataset: n_classes must be >= 2");
  if (class_names.size() != static_cast<std::size_t>(n_classes))
    throw ValidationError("dataset: class_names size must equal n_classes");
  for (const auto& s : scenes) s.validate(n_classes);
}

namespace {

void write_scene(const LabeledScene& s, const std::filesystem::path& path) {
  ByteWriter w;
  w.u32(detail::kSceneMagic);
  w.u32(detail::kFormatVersion);
  w.str(s.scene_id);
  w.str(s.domain_tag);
  w.matrix(s.calibration.intrinsics);
  w.matrix(s.calibration.rotation);
  w.matrix(s.calibration.translation);
  w.i64(s.calibration.image_h);
  w.i64(s.calibration.image_w);
  w.matrix(s.points);
  w.matrix(s.point_labels);
  w.matrix(s.image);
  w.matrix(s.pixel_labels);
  w.commit(path);
}

LabeledScene read_scene(const std::filesystem::path& path) {
  ByteReader r(path);
  if (r.u32() != detail::kSceneMagic) throw IoError("not a scene file: " + r.name());
  if (r.u32() != detail::kFormatVersion)
    throw IoError("unsupported scene version: " + r.name());
  LabeledScene s;
  s.scene_id = r.str();
  s.domain_tag = r.str();
  s.calibration.intrinsics = r.matrix<Eigen::Matrix3d>();
  s.calibration.rotation = r.matrix<Eigen::Matrix3d>();
  s.calibration.translation = r.matrix<Eigen::Vector3d>();
  s.calibration.image_h = static_cast<int>(r.i64());
  s.calibration.image_w = static_cast<int>(r.i64());
  s.points = r.matrix<Points>();
  s.point_labels = r.matrix<Labels>();
  s.image = r.matrix<MatXd>();
  s.pixel_labels = r.matrix<Labels>();
  r.done();
  return s;
}

std::string scene_filename(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "scene_%05zu.bin", index);
  return buf;
}

}  // namespace

void save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  ds.validate();
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory: " + dir.string());

  json manifest;
  manifest["format"] = "spfuse-dataset";
  manifest["version"] = detail::kFormatVersion;
  manifest["n_classes"] = ds.n_classes;
  manifest["class_names"] = ds.class_names;
  manifest["scenes"] = json::array();
  for (std::size_t i = 0; i < ds.scenes.size(); ++i) {
    const std::string file = scene_filename(i);
    write_scene(ds.scenes[i], dir / file);
    manifest["scenes"].push_back({{"file", file},
                                  {"scene_id", ds.scenes[i].scene_id},
                                  {"domain_tag", ds.scenes[i].domain_tag}});
  }
  const std::filesystem::path mpath = dir / "manifest.json";
  std::ofstream f(mpath, std::ios::trunc);
  if (!f) throw IoError("cannot open for write: " + mpath.string());
  f << manifest.dump(2) << "\n";
  if (!f) throw IoError("write failed: " + mpath.string());
}

Dataset load_dataset(const std::filesystem::path& dir) {
  const std::filesystem::path mpath = dir / "manifest.json";
  std::ifstream f(mpath);
  if (!f) throw IoError("missing manifest: " + mpath.string());
  json manifest;
  try {
    f >> manifest;
  } catch (const json::exception& e) {
    throw IoError("malformed manifest " + mpath.string() + ": " + e.what());
  }
  Dataset ds;
  try {
    if (manifest.at("format") != "spfuse-dataset")
      throw IoError("not a dataset manifest: " + mpath.string());
    ds.n_classes = manifest.at("n_classes").get<int>();
    ds.class_names = manifest.at("class_names").get<std::vector<std::string>>();
    for (const auto& entry : manifest.at("scenes")) {
      const std::filesystem::path spath = dir / entry.at("file").get<std::string>();
      if (!std::filesystem::exists(spath))
        throw IoError("manifest lists missing scene file: " + spath.string());
      LabeledScene s = read_scene(spath);
      if (s.scene_id != entry.at("scene_id").get<std::string>())
        throw IoError("scene_id mismatch vs manifest: " + spath.string());
      ds.scenes.push_back(std::move(s));
    }
  } catch (const json::exception& e) {
    throw IoError("malformed manifest " + mpath.string() + ": " + e.what());
  }
  ds.validate();
  return ds;
}

void write_metrics_csv(const SegMetrics& m, const std::vector<std::string>& class_names,
                       const std::filesystem::path& path) {
  const int c = static_cast<int>(m.per_class_iou.size());
  if (!class_names.empty() && class_names.size() != static_cast<std::size_t>(c))
    throw ValidationError("metrics csv: class_names size mismatch");
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot open for write: " + path.string());
  f << "class_index,class_name,iou,valid\n";
  for (int i = 0; i < c; ++i) {
    const std::string name = class_names.empty() ? "class_" + std::to_string(i)
                                                 : class_names[i];
    f << i << ',' << name << ',' << m.per_class_iou[i] << ','
      << (m.class_valid[i] ? 1 : 0) << '\n';
  }
  if (!f) throw IoError("write failed: " + path.string());
}

void write_metrics_json(const SegMetrics& m, const std::filesystem::path& path) {
  json j;
  j["miou"] = m.miou;
  j["n_evaluated"] = m.n_evaluated;
  j["n_ignored"] = m.n_ignored;
  j["per_class_iou"] = std::vector<double>(m.per_class_iou.data(),
                                           m.per_class_iou.data() + m.per_class_iou.size());
  std::vector<bool> valid(m.class_valid.data(), m.class_valid.data() + m.class_valid.size());
  j["class_valid"] = valid;
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot open for write: " + path.string());
  f << j.dump(2) << "\n";
  if (!f) throw IoError("write failed: " + path.string());
}

}  // namespace spfuse
