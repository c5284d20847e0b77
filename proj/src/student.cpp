/*
 * Copyright 2026 The FusionProxy Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "fusionproxy/student.hpp"

#include <fstream>

#include <nlohmann/json.hpp>

#include "fusionproxy/fpx.hpp"

namespace fusionproxy {

using nlohmann::json;

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::kDefault:
      return "default";
    case Variant::kUltralight:
      return "ultralight";
    case Variant::kMobileCnn:
      return "mobile_cnn";
    case Variant::kMobileTransformer:
      return "mobile_transformer";
  }
  return "default";
}

Variant parse_variant(const std::string& name) {
  if (name == "default") return Variant::kDefault;
  if (name == "ultralight") return Variant::kUltralight;
  if (name == "mobile_cnn") return Variant::kMobileCnn;
  if (name == "mobile_transformer") return Variant::kMobileTransformer;
  throw ConfigError("unknown student variant \"" + name +
                    "\"; valid variants: default, ultralight, mobile_cnn, mobile_transformer");
}

StudentConfig StudentConfig::preset(Variant v, std::uint64_t seed) {
  StudentConfig cfg;
  cfg.variant = v;
  cfg.seed = seed;
  cfg.scales = 4;
  switch (v) {
    case Variant::kDefault:
      cfg.widths = {16, 32, 64, 96};
      cfg.depths = {1, 1, 2, 1};
      break;
    case Variant::kMobileTransformer:
      cfg.widths = {16, 32, 48, 80};
      cfg.depths = {1, 1, 2, 1};
      break;
    case Variant::kMobileCnn:
      cfg.widths = {16, 24, 48, 80};
      cfg.depths = {1, 1, 2, 1};
      break;
    case Variant::kUltralight:
      cfg.widths = {8, 16, 32, 48};
      cfg.depths = {1, 1, 1, 1};
      break;
  }
  return cfg;
}

void StudentConfig::validate() const {
  if (scales < 1 || scales > 8) throw ConfigError("student scales must be in [1, 8]");
  if (static_cast<int>(widths.size()) != scales || static_cast<int>(depths.size()) != scales)
    throw ConfigError("student widths/depths must have one entry per scale (" + std::to_string(scales) + ")");
  for (int v : widths)
    if (v < 1) throw ConfigError("student widths must be positive");
  for (int v : depths)
    if (v < 1) throw ConfigError("student depths must be positive");
}

Tensor<float> fuse_any_size(const Student<float>& student, const Tensor<float>& ir, const Tensor<float>& vis) {
  if (ir.dim(1) != vis.dim(1) || ir.dim(2) != vis.dim(2))
    throw ShapeError("ir " + shape_str(ir.shape()) + " and vis " + shape_str(vis.shape()) + " differ in size");
  const int m = student.config().multiple();
  const int h = ir.dim(1), w = ir.dim(2);
  const int ph = round_up(h, m), pw = round_up(w, m);
  if (ph == h && pw == w) return student.forward(ir, vis);
  const Tensor<float> out = student.forward(pad_bottom_right(ir, ph, pw), pad_bottom_right(vis, ph, pw));
  return crop(out, 0, 0, h, w);
}

FusedImage fuse(const Student<float>& student, const ImagePair& pair) {
  Tensor<float> out = fuse_any_size(student, pair.ir, pair.vis);
  if (pair.pad_bottom || pair.pad_right) out = crop(out, 0, 0, pair.orig_height, pair.orig_width);
  return {std::move(out), pair.id};
}

void save_student(const Student<float>& student, const std::filesystem::path& dir) {
  const auto& cfg = student.config();
  std::filesystem::create_directories(dir / "params");
  json desc;
  desc["format_version"] = kFpxMagic;
  desc["variant"] = variant_name(cfg.variant);
  desc["widths"] = cfg.widths;
  desc["depths"] = cfg.depths;
  desc["scales"] = cfg.scales;
  desc["seed"] = cfg.seed;
  desc["parameter_count"] = student.parameter_count();
  desc["params"] = json::array();
  for (const auto& e : student.params().entries()) {
    desc["params"].push_back({{"name", e.name}, {"dims", e.var.shape()}});
    write_fpx(dir / "params" / (e.name + ".fpx"), e.var.value());
  }
  std::ofstream os(dir / "model.json");
  if (!os) throw IoError("cannot write " + (dir / "model.json").string());
  os << desc.dump(2) << "\n";
}

std::unique_ptr<Student<float>> load_student(const std::filesystem::path& dir) {
  const auto path = dir / "model.json";
  std::ifstream is(path);
  if (!is) throw IoError("checkpoint not found: " + path.string());
  json desc;
  try {
    desc = json::parse(is);
  } catch (const json::exception& e) {
    throw IoError(path.string() + ": " + e.what());
  }
  const std::string version = desc.value("format_version", "");
  if (version != kFpxMagic) throw FormatVersionError(version, kFpxMagic);
  StudentConfig cfg;
  cfg.variant = parse_variant(desc.at("variant").get<std::string>());
  cfg.widths = desc.at("widths").get<std::vector<int>>();
  cfg.depths = desc.at("depths").get<std::vector<int>>();
  cfg.scales = desc.at("scales").get<int>();
  cfg.seed = desc.value("seed", std::uint64_t{0});
  auto student = build_student<float>(cfg);
  load_student_params(*student, dir);
  return student;
}

void load_student_params(Student<float>& student, const std::filesystem::path& dir) {
  for (auto& e : student.params().entries())
    e.var.mutable_value() = read_fpx_expect(dir / "params" / (e.name + ".fpx"), e.var.shape());
}

}  // namespace fusionproxy
