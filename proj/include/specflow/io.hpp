#ifndef SPECFLOW_IO_HPP
#define SPECFLOW_IO_HPP

#include "specflow/common.hpp"

#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace specflow {

// Shortest round-trip decimal form of a double (std::to_chars); parsing the
// result with parse_double recovers the value bit-exactly.
std::string format_double(double value);

// Strict double parser; `context` names the field for the error message.
double parse_double(std::string_view token, const std::string& context);

std::vector<std::string> split_csv_line(const std::string& line);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

// Splits on '\n', dropping a trailing '\r' on each line and a final empty line.
std::vector<std::string> split_lines(const std::string& text);

// FNV-1a 64-bit content hash, hex encoded. Used for run-manifest artifact
// fingerprints, not for security.
std::uint64_t fnv1a64(const void* data, std::size_t size);
std::string file_hash_hex(const std::string& path);

// Raw binary payloads: u64 rows, u64 cols, column-major doubles, host layout.
void bin_write_matrix(std::ostream& os, const Matrix& m);
Matrix bin_read_matrix(std::istream& is);
void bin_write_vector(std::ostream& os, const Vector& v);
Vector bin_read_vector(std::istream& is);

}  // namespace specflow

#endif
