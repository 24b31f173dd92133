#pragma once

#include <filesystem>
#include <fstream>
#include <string>

#include "json.hpp"

#include "x2teeth/arch.hpp"
#include "x2teeth/augment.hpp"
#include "x2teeth/io.hpp"
#include "x2teeth/phantom.hpp"
#include "x2teeth/volume.hpp"

// JSON bindings for the value types that appear in configs, manifests and
// reports. Missing keys keep their defaults.
namespace x2t {

using json = nlohmann::json;

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(Range, lo, hi)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(TissueLevels, enamel, dentin, pulp, bone)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(PhantomConfig, min_teeth, max_teeth, arch_depth_mm,
                                                arch_width_mm, arch_exponent, rows, cols, patch,
                                                size_jitter, rotation_jitter_deg, overbite_shift,
                                                tissue, cavity_oversample, max_retries)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(AugmentConfig, max_shift_px, max_scale_delta,
                                                max_rotation_deg, noise_sigma)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ArchCurve, D, W, e)

inline void to_json(json& j, const ToothBox& b) {
  j = json{{"code", b.tooth.code()}, {"x_min", b.x_min}, {"x_max", b.x_max},
           {"y_min", b.y_min}, {"y_max", b.y_max}};
}

inline void from_json(const json& j, ToothBox& b) {
  b.tooth = FdiCode::from_code(j.at("code").get<int>());
  j.at("x_min").get_to(b.x_min);
  j.at("x_max").get_to(b.x_max);
  j.at("y_min").get_to(b.y_min);
  j.at("y_max").get_to(b.y_max);
  if (b.x_min > b.x_max || b.y_min > b.y_max) throw std::invalid_argument("inverted tooth box");
}

inline json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

inline void write_json_file(const std::filesystem::path& path, const json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << j.dump(2) << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace x2t
