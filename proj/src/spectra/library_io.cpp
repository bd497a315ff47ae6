#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string_view>
#include <unordered_set>

#include "twostage/errors.hpp"
#include "twostage/spectra.hpp"

namespace twostage {
namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  for (;;) {
    std::size_t comma = line.find(',', start);
    fields.push_back(trim(line.substr(start, comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return fields;
}

[[noreturn]] void fail(std::size_t line_no, const std::string& what) {
  throw InputError("line " + std::to_string(line_no) + ": " + what);
}

double parse_number(std::string_view field, std::size_t line_no, const char* what) {
  double value = 0.0;
  auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
  if (ec != std::errc() || ptr != field.data() + field.size() || field.empty()) {
    fail(line_no, std::string("cannot parse ") + what + " '" + std::string(field) + "'");
  }
  if (!std::isfinite(value)) fail(line_no, std::string("non-finite ") + what);
  return value;
}

bool is_blank(std::string_view line) { return trim(line).empty(); }

std::string key_of(const std::string& source, const std::string& replicate) {
  return source + '\x1f' + replicate;
}

// Collects spectra and checks the shared-grid contract as rows stream in.
class LibraryBuilder {
 public:
  void add(Spectrum spectrum, std::size_t line_no) {
    if (!seen_.insert(key_of(spectrum.source_id, spectrum.replicate_id)).second) {
      fail(line_no, "duplicate spectrum " + spectrum.source_id + ":" + spectrum.replicate_id);
    }
    try {
      validate(spectrum);
    } catch (const InputError& e) {
      fail(line_no, e.what());
    }
    spectra_.push_back(std::move(spectrum));
  }

  SourceLibrary finish(Grid grid) {
    if (spectra_.empty()) throw InputError("no spectra");
    SourceLibrary library(std::move(grid));
    for (auto& s : spectra_) library.add(std::move(s));
    return library;
  }

 private:
  std::unordered_set<std::string> seen_;
  std::vector<Spectrum> spectra_;
};

SourceLibrary read_long(std::istream& in) {
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (is_blank(line)) continue;
    auto fields = split(line);
    if (fields.size() != 4 || fields[0] != "source_id" || fields[1] != "replicate_id" ||
        fields[2] != "wavenumber" || fields[3] != "absorbance") {
      fail(line_no, "expected header source_id,replicate_id,wavenumber,absorbance");
    }
    have_header = true;
    break;
  }
  if (!have_header) throw InputError("no spectra");

  LibraryBuilder builder;
  Grid grid;
  std::vector<double> wavenumbers;
  std::vector<double> values;
  std::string source, replicate;
  std::size_t block_start = 0;
  std::unordered_set<std::string> closed;

  auto close_block = [&](std::size_t at_line) {
    if (values.empty()) return;
    Eigen::VectorXd w = Eigen::Map<const Eigen::VectorXd>(wavenumbers.data(),
                                                          static_cast<Eigen::Index>(wavenumbers.size()));
    if (!grid) {
      grid = std::make_shared<const Eigen::VectorXd>(std::move(w));
    } else if (grid->size() != static_cast<Eigen::Index>(wavenumbers.size())) {
      fail(at_line, "grid mismatch: spectrum " + source + ":" + replicate + " has " +
                        std::to_string(wavenumbers.size()) + " points, expected " +
                        std::to_string(grid->size()));
    }
    Spectrum s;
    s.grid = grid;
    s.values = Eigen::Map<const Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
    s.source_id = source;
    s.replicate_id = replicate;
    builder.add(std::move(s), block_start);
    closed.insert(key_of(source, replicate));
    wavenumbers.clear();
    values.clear();
  };

  while (std::getline(in, line)) {
    ++line_no;
    if (is_blank(line)) continue;
    auto fields = split(line);
    if (fields.size() != 4) fail(line_no, "expected 4 fields, got " + std::to_string(fields.size()));
    if (fields[0].empty() || fields[1].empty()) fail(line_no, "empty source_id or replicate_id");
    std::string row_source(fields[0]);
    std::string row_replicate(fields[1]);
    if (values.empty() || row_source != source || row_replicate != replicate) {
      close_block(line_no);
      if (closed.count(key_of(row_source, row_replicate)) != 0) {
        fail(line_no, "duplicate spectrum " + row_source + ":" + row_replicate);
      }
      source = std::move(row_source);
      replicate = std::move(row_replicate);
      block_start = line_no;
    }
    double w = parse_number(fields[2], line_no, "wavenumber");
    double a = parse_number(fields[3], line_no, "absorbance");
    if (grid) {
      auto k = static_cast<Eigen::Index>(wavenumbers.size());
      if (k >= grid->size() || (*grid)[k] != w) fail(line_no, "grid mismatch across spectra");
    }
    wavenumbers.push_back(w);
    values.push_back(a);
  }
  close_block(line_no);
  return builder.finish(grid);
}

SourceLibrary read_wide(std::istream& in) {
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::pair<std::string, std::string>> labels;
  while (std::getline(in, line)) {
    ++line_no;
    if (is_blank(line)) continue;
    auto fields = split(line);
    if (fields.empty() || fields[0] != "wavenumber") fail(line_no, "expected header starting with wavenumber");
    for (std::size_t c = 1; c < fields.size(); ++c) {
      auto colon = fields[c].rfind(':');
      if (colon == std::string_view::npos || colon == 0 || colon + 1 == fields[c].size()) {
        fail(line_no, "column '" + std::string(fields[c]) + "' is not <source:replicate>");
      }
      labels.emplace_back(std::string(fields[c].substr(0, colon)), std::string(fields[c].substr(colon + 1)));
    }
    break;
  }
  if (labels.empty()) throw InputError("no spectra");

  std::vector<double> wavenumbers;
  std::vector<std::vector<double>> columns(labels.size());
  while (std::getline(in, line)) {
    ++line_no;
    if (is_blank(line)) continue;
    auto fields = split(line);
    if (fields.size() != labels.size() + 1) {
      fail(line_no, "expected " + std::to_string(labels.size() + 1) + " fields, got " +
                        std::to_string(fields.size()));
    }
    double w = parse_number(fields[0], line_no, "wavenumber");
    if (!wavenumbers.empty() && !(w > wavenumbers.back())) fail(line_no, "wavenumbers not strictly increasing");
    wavenumbers.push_back(w);
    for (std::size_t c = 0; c < labels.size(); ++c) {
      columns[c].push_back(parse_number(fields[c + 1], line_no, "absorbance"));
    }
  }
  if (wavenumbers.empty()) throw InputError("no spectra");

  auto grid = std::make_shared<const Eigen::VectorXd>(
      Eigen::Map<const Eigen::VectorXd>(wavenumbers.data(), static_cast<Eigen::Index>(wavenumbers.size())));
  LibraryBuilder builder;
  for (std::size_t c = 0; c < labels.size(); ++c) {
    Spectrum s;
    s.grid = grid;
    s.values = Eigen::Map<const Eigen::VectorXd>(columns[c].data(), static_cast<Eigen::Index>(columns[c].size()));
    s.source_id = labels[c].first;
    s.replicate_id = labels[c].second;
    builder.add(std::move(s), 1);
  }
  return builder.finish(grid);
}

}  // namespace

CsvFormat parse_csv_format(const std::string& name) {
  if (name == "long-csv") return CsvFormat::kLong;
  if (name == "wide-csv") return CsvFormat::kWide;
  throw InputError("unknown format '" + name + "' (expected long-csv or wide-csv)");
}

std::string to_string(CsvFormat format) { return format == CsvFormat::kLong ? "long-csv" : "wide-csv"; }

SourceLibrary read_library(std::istream& in, CsvFormat format) {
  return format == CsvFormat::kLong ? read_long(in) : read_wide(in);
}

SourceLibrary load_library(const std::string& path, CsvFormat format) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path);
  try {
    return read_library(in, format);
  } catch (const InputError& e) {
    throw InputError(path + ": " + e.what());
  }
}

void write_library(std::ostream& out, const SourceLibrary& library, CsvFormat format) {
  const auto old_precision = out.precision();
  out << std::setprecision(17);
  const Eigen::VectorXd& grid = *library.grid();
  if (format == CsvFormat::kLong) {
    out << "source_id,replicate_id,wavenumber,absorbance\n";
    for (const auto& source : library.sources()) {
      for (const auto& s : source.replicates) {
        for (Eigen::Index k = 0; k < s.size(); ++k) {
          out << s.source_id << ',' << s.replicate_id << ',' << grid[k] << ',' << s.values[k] << '\n';
        }
      }
    }
  } else {
    out << "wavenumber";
    std::vector<const Spectrum*> all;
    for (const auto& source : library.sources()) {
      for (const auto& s : source.replicates) {
        out << ',' << s.source_id << ':' << s.replicate_id;
        all.push_back(&s);
      }
    }
    out << '\n';
    for (Eigen::Index k = 0; k < grid.size(); ++k) {
      out << grid[k];
      for (const Spectrum* s : all) out << ',' << s->values[k];
      out << '\n';
    }
  }
  out.precision(old_precision);
}

void save_library(const std::string& path, const SourceLibrary& library, CsvFormat format) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path);
  write_library(out, library, format);
}

}  // namespace twostage
