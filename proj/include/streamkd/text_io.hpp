#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace streamkd {

/// Canonical decimal form used by every file format in the project: 9
/// significant digits. 9 < DBL_DIG, so parse(fmt_real9(x)) re-prints to the
/// identical string, making all on-disk formats stable under load/save cycles.
std::string fmt_real9(double x);

/// strtod with full-token validation; throws parse_error on trailing garbage
double parse_real(std::string_view token);

long long parse_int(std::string_view token);

std::vector<std::string_view> split(std::string_view s, char sep);

std::string_view trim(std::string_view s);

/// whole-file read; throws io_error
std::string read_file(const std::string& path);

/// write via temp file + rename so readers never observe a partial file
void atomic_write_file(const std::string& path, const std::string& content);

}  // namespace streamkd
