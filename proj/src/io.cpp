#include "strtf/io.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

namespace strtf {

CsvError::CsvError(Kind k, std::size_t l, const std::string& what)
    : std::runtime_error(fmt::format("line {}: {}", l, what)), kind(k), line(l) {}

std::string format_double(double v) { return fmt::format("{:.17g}", v); }

void write_matrix_csv(const Matrix& m, std::ostream& out) {
  std::string buf;
  for (Index j = 0; j < m.cols(); ++j) buf += fmt::format("{}c{}", j == 0 ? "" : ",", j);
  buf += '\n';
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) {
      if (j > 0) buf += ',';
      buf += format_double(m(i, j));
    }
    buf += '\n';
  }
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

void write_matrix_csv(const Matrix& m, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::ios_base::failure(fmt::format("cannot open '{}' for writing", path.string()));
  write_matrix_csv(m, out);
  if (!out) throw std::ios_base::failure(fmt::format("failed writing '{}'", path.string()));
}

namespace {

std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.push_back(line);
    start = end + 1;
  }
  return lines;
}

std::vector<std::string_view> split_cells(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      cells.push_back(line.substr(start));
      return cells;
    }
    cells.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  return s;
}

}  // namespace

Matrix parse_matrix_csv(const std::string& text) {
  const std::vector<std::string_view> lines = split_lines(text);
  if (lines.empty() || (lines.size() == 1 && trim(lines[0]).empty())) {
    throw CsvError(CsvError::Kind::empty, 1, "empty file");
  }
  const std::size_t cols = split_cells(lines[0]).size();
  if (lines.size() < 2) throw CsvError(CsvError::Kind::empty, 2, "no data rows after the header");
  Matrix m(static_cast<Index>(lines.size() - 1), static_cast<Index>(cols));
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto cells = split_cells(lines[i]);
    if (cells.size() != cols) {
      throw CsvError(CsvError::Kind::ragged, i + 1,
                     fmt::format("expected {} cells, found {}", cols, cells.size()));
    }
    for (std::size_t j = 0; j < cols; ++j) {
      const std::string_view cell = trim(cells[j]);
      double v = 0.0;
      const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (cell.empty() || ec != std::errc() || ptr != cell.data() + cell.size()) {
        throw CsvError(CsvError::Kind::non_numeric, i + 1,
                       fmt::format("column {}: '{}' is not a number", j + 1, cell));
      }
      if (!std::isfinite(v)) {
        throw CsvError(CsvError::Kind::non_numeric, i + 1,
                       fmt::format("column {}: '{}' is not finite", j + 1, cell));
      }
      m(static_cast<Index>(i - 1), static_cast<Index>(j)) = v;
    }
  }
  return m;
}

Matrix read_matrix_csv(const std::filesystem::path& path) {
  return parse_matrix_csv(read_text_file(path));
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::ios_base::failure(fmt::format("cannot open '{}'", path.string()));
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::ios_base::failure(fmt::format("cannot open '{}' for writing", path.string()));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw std::ios_base::failure(fmt::format("failed writing '{}'", path.string()));
}

std::string diagnostics_to_json(const DiagnosticsRecord& r) {
  nlohmann::ordered_json j;
  j["iter"] = r.iteration;
  j["loss_total"] = r.loss.total;
  j["loss_rec"] = r.loss.rec;
  j["loss_str"] = r.loss.str;
  j["loss_sep"] = r.loss.sep;
  j["loss_smooth"] = r.loss.smooth;
  j["loss_ent"] = r.loss.ent;
  j["loss_gap"] = r.loss.gap;
  j["branch_str"] = r.branch_str;
  j["expected_scale"] = r.expected_scale;
  j["center"] = r.center;
  j["alpha"] = r.alpha;
  if (r.mac) {
    j["mac"] = *r.mac;
    j["branch_corr"] = r.branch_corr;
    j["matched_index"] = r.matched_index;
  }
  return j.dump();
}

DiagnosticsRecord diagnostics_from_json(const std::string& line) {
  const nlohmann::json j = nlohmann::json::parse(line);
  DiagnosticsRecord r;
  r.iteration = j.at("iter");
  r.loss.total = j.at("loss_total");
  r.loss.rec = j.at("loss_rec");
  r.loss.str = j.at("loss_str");
  r.loss.sep = j.at("loss_sep");
  r.loss.smooth = j.at("loss_smooth");
  r.loss.ent = j.at("loss_ent");
  r.loss.gap = j.at("loss_gap");
  r.branch_str = j.at("branch_str").get<std::vector<double>>();
  r.expected_scale = j.at("expected_scale").get<std::vector<double>>();
  r.center = j.at("center").get<std::vector<double>>();
  r.alpha = j.at("alpha").get<std::vector<double>>();
  if (j.contains("mac")) {
    r.mac = j.at("mac").get<double>();
    r.branch_corr = j.at("branch_corr").get<std::vector<double>>();
    r.matched_index = j.at("matched_index").get<std::vector<int>>();
  }
  return r;
}

void append_diagnostics(const DiagnosticsRecord& record, std::ostream& out) {
  out << diagnostics_to_json(record) << '\n';
  out.flush();
}

void write_diagnostics(const DiagnosticsLog& log, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::ios_base::failure(fmt::format("cannot open '{}' for writing", path.string()));
  for (const auto& r : log) append_diagnostics(r, out);
  if (!out) throw std::ios_base::failure(fmt::format("failed writing '{}'", path.string()));
}

DiagnosticsReadResult parse_diagnostics(const std::string& text) {
  DiagnosticsReadResult out;
  for (std::string_view line : split_lines(text)) {
    if (trim(line).empty()) continue;
    try {
      out.log.push_back(diagnostics_from_json(std::string(line)));
    } catch (const nlohmann::json::exception&) {
      ++out.skipped;
    }
  }
  return out;
}

DiagnosticsReadResult read_diagnostics(const std::filesystem::path& path) {
  return parse_diagnostics(read_text_file(path));
}

}  // namespace strtf
