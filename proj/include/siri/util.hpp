#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace siri {

std::string_view trim(std::string_view s);
std::string_view trim_right(std::string_view s);
std::string to_lower(std::string_view s);
std::vector<std::string> split_lines(std::string_view s);

/// Lowercase hex SHA-256 of arbitrary bytes.
std::string sha256_hex(std::string_view bytes);

std::string base64_encode(std::string_view bytes);
/// Throws SchemaError on malformed input.
std::string base64_decode(std::string_view text);

/// Shortest decimal rendering of a score, at most two decimals ("0.8", "0.25", "1").
std::string format_score(double value);

/// UTC timestamp, ISO-8601 with milliseconds.
std::string utc_timestamp();

std::string read_file(const std::string& path);
/// Writes through a temporary file and renames it into place.
void write_file_atomic(const std::string& path, std::string_view contents);

}  // namespace siri
