#pragma once

#include <string>
#include <string_view>

namespace attnlab {

// Writes `contents` to `path` through a sibling temp file and a rename, so a
// reader never observes a partially written file.
void write_file_atomic(const std::string& path, std::string_view contents);

std::string read_file(const std::string& path);

// printf-style "%.*g" formatting.
std::string format_real(double value, int significant_digits = 9);

}  // namespace attnlab
