/*
 * Copyright 2026 The confshap Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

// Minimal RFC 4180 reader/writer and a JSON-lines loader producing a
// string-cell table. Typing happens later, during ingestion.

#include <cctype>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "confshap/error.hpp"

namespace confshap {

struct RawTable {
  std::vector<std::string> columns;
  // A disengaged cell is an explicit JSON null; empty CSV cells are kept as
  // empty strings and interpreted by the ingestion missing-value rules.
  std::vector<std::vector<std::optional<std::string>>> rows;

  std::optional<std::size_t> find(std::string_view column) const {
    for (std::size_t i = 0; i < columns.size(); ++i) {
      if (columns[i] == column) return i;
    }
    return std::nullopt;
  }
};

namespace detail {

// Splits one logical CSV record; returns false at end of input.
inline bool read_csv_record(std::istream& in, std::vector<std::string>& out,
                            std::size_t& line_no) {
  out.clear();
  std::string field;
  bool in_quotes = false;
  bool any = false;
  char c;
  while (in.get(c)) {
    any = true;
    if (in_quotes) {
      if (c == '"') {
        if (in.peek() == '"') {
          in.get(c);
          field.push_back('"');
        } else {
          in_quotes = false;
        }
      } else {
        if (c == '\n') ++line_no;
        field.push_back(c);
      }
      continue;
    }
    if (c == '"') {
      in_quotes = true;
    } else if (c == ',') {
      out.push_back(std::move(field));
      field.clear();
    } else if (c == '\r') {
      if (in.peek() == '\n') continue;
      ++line_no;
      out.push_back(std::move(field));
      return true;
    } else if (c == '\n') {
      ++line_no;
      out.push_back(std::move(field));
      return true;
    } else {
      field.push_back(c);
    }
  }
  if (in_quotes) {
    throw DataError("unterminated quoted field near line " +
                    std::to_string(line_no + 1));
  }
  if (!any) return false;
  out.push_back(std::move(field));
  return true;
}

inline bool needs_quotes(std::string_view s) {
  if (s.empty()) return false;
  if (s.front() == ' ' || s.back() == ' ') return true;
  return s.find_first_of(",\"\r\n") != std::string_view::npos;
}

}  // namespace detail

inline void write_csv_field(std::ostream& out, std::string_view s) {
  if (!detail::needs_quotes(s)) {
    out << s;
    return;
  }
  out << '"';
  for (char c : s) {
    if (c == '"') out << '"';
    out << c;
  }
  out << '"';
}

inline RawTable parse_csv(std::istream& in) {
  RawTable table;
  std::vector<std::string> record;
  std::size_t line_no = 0;
  if (!detail::read_csv_record(in, record, line_no)) {
    throw DataError("CSV input is empty (no header)");
  }
  table.columns = record;
  while (detail::read_csv_record(in, record, line_no)) {
    if (record.size() == 1 && record[0].empty()) continue;  // blank line
    if (record.size() != table.columns.size()) {
      throw DataError("CSV line " + std::to_string(line_no) + " has " +
                      std::to_string(record.size()) + " fields, header has " +
                      std::to_string(table.columns.size()));
    }
    std::vector<std::optional<std::string>> row;
    row.reserve(record.size());
    for (auto& f : record) row.emplace_back(std::move(f));
    table.rows.push_back(std::move(row));
  }
  return table;
}

inline RawTable parse_jsonl(std::istream& in) {
  RawTable table;
  std::string line;
  std::size_t line_no = 0;
  std::vector<nlohmann::json> objects;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json obj;
    try {
      obj = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw DataError("JSON-lines line " + std::to_string(line_no) +
                      ": " + e.what());
    }
    if (!obj.is_object()) {
      throw DataError("JSON-lines line " + std::to_string(line_no) +
                      " is not an object");
    }
    for (auto it = obj.begin(); it != obj.end(); ++it) {
      if (!table.find(it.key())) table.columns.push_back(it.key());
    }
    objects.push_back(std::move(obj));
  }
  for (const auto& obj : objects) {
    std::vector<std::optional<std::string>> row(table.columns.size(),
                                                std::string());
    for (std::size_t c = 0; c < table.columns.size(); ++c) {
      auto it = obj.find(table.columns[c]);
      if (it == obj.end() || it->is_null()) {
        row[c] = std::nullopt;
      } else if (it->is_string()) {
        row[c] = it->get<std::string>();
      } else if (it->is_boolean()) {
        row[c] = it->get<bool>() ? "1" : "0";
      } else {
        row[c] = it->dump();
      }
    }
    table.rows.push_back(std::move(row));
  }
  return table;
}

// Reads CSV, or JSON-lines when the extension is .jsonl/.ndjson or the first
// non-blank character is '{'.
inline RawTable read_table(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read file '" + path.string() + "'");
  const auto ext = path.extension().string();
  bool jsonl = ext == ".jsonl" || ext == ".ndjson";
  if (!jsonl && ext != ".csv") {
    char c;
    while (in.get(c)) {
      if (!std::isspace(static_cast<unsigned char>(c))) {
        jsonl = c == '{';
        break;
      }
    }
    in.clear();
    in.seekg(0);
  }
  return jsonl ? parse_jsonl(in) : parse_csv(in);
}

}  // namespace confshap
