#pragma once

#include <string>
#include <vector>

namespace contagion {

/// Shortest decimal string that parses back to the same double.
std::string format_number(double x);

/// Comma-separated line, no trailing newline.
std::string csv_row(const std::vector<double>& values);

/// Writes content to path through a temporary file and a rename, so readers
/// never observe a partially written file. Throws std::runtime_error.
void write_file_atomic(const std::string& path, const std::string& content);

}  // namespace contagion
