// Copyright (c) 2026 rgalign contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "rgalign/autodiff.hpp"
#include "rgalign/hash.hpp"
#include "rgalign/tensor.hpp"

namespace rgalign::io {

using nlohmann::json;

inline void write_text_file(const std::filesystem::path& path,
                            const std::string& content) {
  std::filesystem::create_directories(path.parent_path().empty()
                                          ? std::filesystem::path(".")
                                          : path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open for write: " + path.string());
  out << content;
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open for read: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Calls fn(line_number, line) for each non-empty line; line numbers are
// 1-based so parse errors can name their line.
inline void for_each_line(
    const std::filesystem::path& path,
    const std::function<void(std::size_t, const std::string&)>& fn) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open for read: " + path.string());
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    fn(line_no, line);
  }
}

inline json parse_line(const std::filesystem::path& path, std::size_t line_no,
                       const std::string& line) {
  try {
    return json::parse(line);
  } catch (const json::exception& e) {
    throw std::runtime_error(path.string() + ": line " +
                             std::to_string(line_no) + ": " + e.what());
  }
}

inline std::uint64_t file_fingerprint(const std::filesystem::path& path) {
  return hash::fnv1a64(read_text_file(path));
}

inline std::string hex64(std::uint64_t x) {
  char buf[19];
  std::snprintf(buf, sizeof(buf), "0x%016llx",
                static_cast<unsigned long long>(x));
  return std::string(buf);
}

// ---------------------------------------------------------------------------
// ParamStore <-> JSON
// ---------------------------------------------------------------------------

inline json params_to_json(const diff::ParamStore& ps) {
  json out = json::object();
  for (const auto& p : ps.items()) {
    out[p.name] = {{"rows", p.value.rows},
                   {"cols", p.value.cols},
                   {"data", p.value.data}};
  }
  return out;
}

inline void params_from_json(const json& j, diff::ParamStore& ps) {
  for (auto& p : ps.items()) {
    if (!j.contains(p.name))
      throw std::runtime_error("checkpoint missing parameter " + p.name);
    const auto& pj = j.at(p.name);
    const std::size_t rows = pj.at("rows").get<std::size_t>();
    const std::size_t cols = pj.at("cols").get<std::size_t>();
    if (rows != p.value.rows || cols != p.value.cols)
      throw std::runtime_error("checkpoint shape mismatch for " + p.name);
    p.value.data = pj.at("data").get<std::vector<double>>();
    if (p.value.data.size() != rows * cols)
      throw std::runtime_error("checkpoint data length mismatch for " + p.name);
  }
}

}  // namespace rgalign::io
