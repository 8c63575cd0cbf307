#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace noisyforge {

// Shortest round-trip text for a double ("%.17g" trimmed to the fewest
// digits that parse back exactly). Output depends only on the value.
std::string format_real(double value);

void write_text_file(const std::filesystem::path& path, std::string_view contents);
std::string read_text_file(const std::filesystem::path& path);

// Splits simple comma-separated text (no quoting) into rows of fields.
// Blank lines are skipped.
std::vector<std::vector<std::string>> parse_csv(std::string_view text);

}  // namespace noisyforge
