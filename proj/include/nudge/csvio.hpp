#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace nudge {

/// Shortest %g representation with the given significant digits.
std::string format_g(double v, int significant);

/// Round-trip-exact representation (17 significant digits).
inline std::string format_exact(double v) { return format_g(v, 17); }

/// Splits one CSV line on commas; no quoting (none of our files need it).
std::vector<std::string> split_csv_line(const std::string& line);

double parse_double(const std::string& field, const std::string& context);
long parse_long(const std::string& field, const std::string& context);
std::uint64_t parse_u64(const std::string& field, const std::string& context);

/// Reads a whole file; throws nudge::Error when unreadable.
std::string read_text_file(const std::string& path);

/// Writes atomically enough for our purposes (truncate + write + close).
void write_text_file(const std::string& path, const std::string& content);

/// FNV-1a content hash of a file on disk, as a fixed-width hex string.
std::string hash_file_hex(const std::string& path);

}  // namespace nudge
