// Copyright 2026 The SAGE Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "sage/common.hpp"
#include "sage/params.hpp"
#include "sage/tensor.hpp"

namespace sage {

using json = nlohmann::json;

// All binary containers share the same layout: ASCII magic line, an 8-byte
// little-endian header length, a JSON header, then raw little-endian float64
// arrays.

inline void write_exact(std::ofstream& f, const void* p, std::size_t n) {
  f.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
  if (!f) throw IoError("write failed");
}

inline void read_exact(std::ifstream& f, void* p, std::size_t n) {
  f.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (f.gcount() != static_cast<std::streamsize>(n)) {
    throw IoError("unexpected end of file");
  }
}

inline void write_u64(std::ofstream& f, std::uint64_t x) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(x >> (8 * i));
  write_exact(f, b, 8);
}

inline std::uint64_t read_u64(std::ifstream& f) {
  unsigned char b[8];
  read_exact(f, b, 8);
  std::uint64_t x = 0;
  for (int i = 0; i < 8; ++i) x |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return x;
}

inline void write_doubles(std::ofstream& f, const double* p, std::size_t n) {
  static_assert(sizeof(double) == 8);
  write_exact(f, p, n * 8);
}

inline void read_doubles(std::ifstream& f, double* p, std::size_t n) {
  read_exact(f, p, n * 8);
}

inline void write_container_header(std::ofstream& f, const std::string& magic,
                                   const json& header) {
  write_exact(f, magic.data(), magic.size());
  write_exact(f, "\n", 1);
  std::string h = header.dump();
  write_u64(f, h.size());
  write_exact(f, h.data(), h.size());
}

inline json read_container_header(std::ifstream& f, const std::string& magic) {
  std::string m(magic.size(), '\0');
  read_exact(f, m.data(), m.size());
  char nl = 0;
  read_exact(f, &nl, 1);
  if (m != magic || nl != '\n') {
    throw IoError("bad magic: expected " + magic);
  }
  std::uint64_t n = read_u64(f);
  std::string h(n, '\0');
  read_exact(f, h.data(), n);
  return json::parse(h);
}

// --- checkpoints ----------------------------------------------------------------

inline constexpr const char* kCheckpointMagic = "SAGE-CKPT-1";

inline void save_checkpoint(const std::filesystem::path& path,
                            const ParameterStore& ps,
                            const std::string& config_hash) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for write: " + path.string());
  json entries = json::array();
  for (const auto& name : ps.names()) {
    entries.push_back({{"name", name}, {"shape", ps.at(name).shape}});
  }
  json header = {{"config_hash", config_hash},
                 {"entries", entries},
                 {"step_count", ps.step_count}};
  write_container_header(f, kCheckpointMagic, header);
  for (const auto& name : ps.names()) {
    const Tensor& t = ps.at(name);
    write_doubles(f, t.data(), t.numel());
  }
  if (!f) throw IoError("write failed: " + path.string());
}

struct Checkpoint {
  ParameterStore params;
  std::string config_hash;
};

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open: " + path.string());
  json header = read_container_header(f, kCheckpointMagic);
  Checkpoint ck;
  ck.config_hash = header.at("config_hash").get<std::string>();
  ck.params.step_count = header.at("step_count").get<std::uint64_t>();
  for (const auto& e : header.at("entries")) {
    std::string name = e.at("name").get<std::string>();
    std::vector<std::size_t> shape = e.at("shape").get<std::vector<std::size_t>>();
    Tensor& t = ck.params.create(name, shape);
    read_doubles(f, t.data(), t.numel());
  }
  return ck;
}

// 64-bit content hash of a file, for run manifests.
inline std::string file_hash(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open: " + path.string());
  std::uint64_t h = 0xcbf29ce484222325ull;
  char buf[65536];
  while (f) {
    f.read(buf, sizeof buf);
    std::streamsize n = f.gcount();
    if (n > 0) h = fnv1a_bytes(buf, static_cast<std::size_t>(n), h);
  }
  return hash_hex(h);
}

inline void write_text_file(const std::filesystem::path& path,
                            const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for write: " + path.string());
  f.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!f) throw IoError("write failed: " + path.string());
}

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open: " + path.string());
  std::string s((std::istreambuf_iterator<char>(f)),
                std::istreambuf_iterator<char>());
  return s;
}

}  // namespace sage
