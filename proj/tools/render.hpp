#pragma once

#include <string>
#include <vector>

#include <json.hpp>

namespace vlfuse::cli {

/// Quotes a CSV field when it contains a separator, quote or line break.
std::string csv_field(const std::string& value);
std::string csv_row(const std::vector<std::string>& fields);

/// Accuracy in [0, 1] as a percentage with two decimals.
std::string percent(double value);
/// Plain decimal with enough digits to round-trip.
std::string number(double value);

/// Markdown rendering of any report document written by the commands
/// (dispatches on its "command" field).
std::string render_markdown(const nlohmann::json& report);

}  // namespace vlfuse::cli
