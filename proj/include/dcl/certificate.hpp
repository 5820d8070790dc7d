// Empirical quantity vs. theoretical bound, with Monte Carlo error bars.
#pragma once

#include <cstdint>
#include <string>

#include "json.hpp"

namespace dcl {

using Json = nlohmann::ordered_json;

struct BoundCertificate {
  std::string check;
  double lhs = 0.0;
  double rhs = 0.0;
  double mc_stderr = 0.0;    // 0 when both sides are exact
  std::uint64_t trials = 0;  // 0 for exact checks
  double slack = 0.0;        // extra additive tolerance beyond 3 * stderr
  bool passed = false;
  Json meta = Json::object();

  /// lhs <= rhs + 3 mc_stderr + slack.
  void decide() { passed = lhs <= rhs + 3.0 * mc_stderr + slack; }

  Json to_json() const {
    Json j;
    j["check"] = check;
    j["lhs"] = lhs;
    j["rhs"] = rhs;
    j["stderr"] = mc_stderr;
    j["trials"] = trials;
    j["passed"] = passed;
    j["meta"] = meta;
    return j;
  }
};

}  // namespace dcl
