#pragma once

#include <string>

#include "json.hpp"

namespace cardiofuse {

/// Serializes with every floating-point number printed as %.17g, so reports
/// round-trip exactly and print identically across runs.
std::string dump_json(const nlohmann::ordered_json& value, int indent = 2);

}  // namespace cardiofuse
