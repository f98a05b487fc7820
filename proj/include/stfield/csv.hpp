#pragma once

#include "stfield/types.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace stfield {

/// Shortest round-trippable-enough text for a double (%.12g; nan/inf spelled out).
inline std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

using CsvRow = std::vector<std::string>;

struct CsvTable {
  CsvRow header;
  std::vector<CsvRow> rows;

  std::size_t column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    throw SchemaError("no column named " + name);
  }
};

/// Fields never contain commas or quotes here, so no quoting is needed.
inline void write_csv(const std::filesystem::path& path, const CsvTable& table) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw SchemaError("cannot write " + path.string());
  auto emit = [&](const CsvRow& row) {
    if (row.size() != table.header.size()) throw SchemaError("row width differs from header in " + path.string());
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (row[i].find_first_of(",\"\n") != std::string::npos) throw SchemaError("field needs quoting: " + row[i]);
      out << (i ? "," : "") << row[i];
    }
    out << '\n';
  };
  emit(table.header);
  for (const auto& r : table.rows) emit(r);
}

inline CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw SchemaError("cannot open " + path.string());
  CsvTable t;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    CsvRow row;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) row.push_back(field);
    if (!line.empty() && line.back() == ',') row.emplace_back();
    if (first) {
      t.header = std::move(row);
      first = false;
    } else {
      if (row.size() != t.header.size()) throw SchemaError("ragged row in " + path.string());
      t.rows.push_back(std::move(row));
    }
  }
  if (first) throw SchemaError(path.string() + " has no header");
  return t;
}

}  // namespace stfield
