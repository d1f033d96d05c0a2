#pragma once

#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>

#include "strtf/diagnostics.hpp"
#include "strtf/numerics/tensor.hpp"

namespace strtf {

/// CSV parse failure; `line` is 1-based, the header being line 1.
class CsvError : public std::runtime_error {
 public:
  enum class Kind { empty, ragged, non_numeric };
  CsvError(Kind kind, std::size_t line, const std::string& what);
  Kind kind;
  std::size_t line;
};

/// Header "c0,c1,...", then one row per line with 17 significant digits.
void write_matrix_csv(const Matrix& m, const std::filesystem::path& path);
void write_matrix_csv(const Matrix& m, std::ostream& out);
Matrix read_matrix_csv(const std::filesystem::path& path);
Matrix parse_matrix_csv(const std::string& text);

std::string format_double(double v);

std::string diagnostics_to_json(const DiagnosticsRecord& record);
DiagnosticsRecord diagnostics_from_json(const std::string& line);

/// Appends one JSON line and flushes.
void append_diagnostics(const DiagnosticsRecord& record, std::ostream& out);
void write_diagnostics(const DiagnosticsLog& log, const std::filesystem::path& path);

struct DiagnosticsReadResult {
  DiagnosticsLog log;
  std::size_t skipped = 0;  // malformed lines
};
DiagnosticsReadResult read_diagnostics(const std::filesystem::path& path);
DiagnosticsReadResult parse_diagnostics(const std::string& text);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace strtf
