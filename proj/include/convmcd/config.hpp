#pragma once

// Run configuration shared by the command-line tools, loadable from JSON.
// Unknown keys are rejected.

#include <cstdint>
#include <fstream>
#include <set>
#include <string>

#include "json.hpp"

#include "convmcd/error.hpp"
#include "convmcd/loss.hpp"
#include "convmcd/metrics.hpp"
#include "convmcd/targets.hpp"

namespace convmcd {

struct RunConfig {
  DistanceMapKind distance = DistanceMapKind::d2;
  ContourRadius radius = ContourRadius::automatic();
  D1Direction d1_direction = D1Direction::to_foreground;
  LossWeights weights;
  HeadVariant variant = HeadVariant::mcd;
  MetricProtocol protocol;
  std::uint64_t seed = 0;

  void validate() const {
    weights.validate();
    validate_widths(protocol.trimap_widths);
    if (protocol.mf_tolerance < 0.0) throw InvalidArgument("mf_tolerance must be >= 0");
    if (protocol.mf_thresholds.empty()) throw InvalidArgument("mf_thresholds must not be empty");
    for (double t : protocol.mf_thresholds) {
      if (!(t > 0.0 && t < 1.0)) throw InvalidArgument("mf_thresholds must lie in (0, 1)");
    }
  }
};

namespace detail {
inline void reject_unknown(const nlohmann::json& j, const std::set<std::string>& known, const std::string& where) {
  if (!j.is_object()) throw InvalidArgument(where + " must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) throw InvalidArgument("unknown key '" + key + "' in " + where);
  }
}
}  // namespace detail

inline RunConfig run_config_from_json(const nlohmann::json& j) {
  detail::reject_unknown(j,
                         {"distance", "radius", "d1_direction", "weights", "variant", "trimap_widths",
                          "mf_tolerance", "mf_thresholds", "seed"},
                         "run config");
  RunConfig c;
  try {
    if (j.contains("distance")) c.distance = parse_distance_kind(j.at("distance").get<std::string>());
    if (j.contains("radius")) {
      const auto& r = j.at("radius");
      c.radius = r.is_string() ? ContourRadius::parse(r.get<std::string>()) : ContourRadius::fixed(r.get<int>());
    }
    if (j.contains("d1_direction")) {
      const auto s = j.at("d1_direction").get<std::string>();
      if (s == "to_foreground") {
        c.d1_direction = D1Direction::to_foreground;
      } else if (s == "to_background") {
        c.d1_direction = D1Direction::to_background;
      } else {
        throw InvalidArgument("d1_direction must be to_foreground or to_background");
      }
    }
    if (j.contains("weights")) {
      const auto& w = j.at("weights");
      detail::reject_unknown(w, {"mask", "contour", "distance"}, "weights");
      if (w.contains("mask")) c.weights.mask = w.at("mask").get<double>();
      if (w.contains("contour")) c.weights.contour = w.at("contour").get<double>();
      if (w.contains("distance")) c.weights.distance = w.at("distance").get<double>();
    }
    if (j.contains("variant")) c.variant = parse_variant(j.at("variant").get<std::string>());
    if (j.contains("trimap_widths")) c.protocol.trimap_widths = j.at("trimap_widths").get<std::vector<int>>();
    if (j.contains("mf_tolerance")) c.protocol.mf_tolerance = j.at("mf_tolerance").get<double>();
    if (j.contains("mf_thresholds")) c.protocol.mf_thresholds = j.at("mf_thresholds").get<std::vector<double>>();
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("run config: ") + e.what());
  }
  c.validate();
  return c;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open config " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(path + ": " + e.what());
  }
  return run_config_from_json(j);
}

}  // namespace convmcd
