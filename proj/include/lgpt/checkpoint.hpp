#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lgpt/model.hpp"

namespace lgpt {

// ---------------------------------------------------------------------------
// Checkpoint file: a JSON header {format_version, config, tensors: [{name,
// shape, offset}]} followed immediately by raw little-endian 32-bit floats in
// manifest order. Offsets are relative to the start of the data section.
// The header is located by scanning to the matching closing brace, so the
// file needs no length prefix. Round trips are byte-exact.
// ---------------------------------------------------------------------------

inline constexpr int kCheckpointFormatVersion = 1;

namespace detail {

// Length in bytes of the JSON document that starts at buf[0] == '{'.
inline std::size_t json_header_length(const std::string& buf) {
  if (buf.empty() || buf[0] != '{')
    throw ParseError("checkpoint: file does not start with a JSON header");
  int depth = 0;
  bool in_string = false, escaped = false;
  for (std::size_t i = 0; i < buf.size(); ++i) {
    char c = buf[i];
    if (in_string) {
      if (escaped)
        escaped = false;
      else if (c == '\\')
        escaped = true;
      else if (c == '"')
        in_string = false;
      continue;
    }
    if (c == '"')
      in_string = true;
    else if (c == '{')
      ++depth;
    else if (c == '}') {
      if (--depth == 0) return i + 1;
    }
  }
  throw ParseError("checkpoint: unterminated JSON header");
}

}  // namespace detail

template <class Real>
void save_checkpoint(const std::string& path, const GptModel<Real>& m) {
  auto params = m.parameters();
  nlohmann::json manifest = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& p : params) {
    manifest.push_back({{"name", p.name},
                        {"shape", p.tensor.shape()},
                        {"offset", offset}});
    offset += std::uint64_t(p.tensor.size()) * sizeof(float);
  }
  nlohmann::json header = {{"format_version", kCheckpointFormatVersion},
                           {"config", m.cfg},
                           {"tensors", manifest}};
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("checkpoint: cannot open for writing: " + path);
  const std::string head = header.dump();
  out.write(head.data(), std::streamsize(head.size()));
  std::vector<float> row;
  for (const auto& p : params) {
    row.resize(p.tensor.size());
    for (std::size_t i = 0; i < row.size(); ++i)
      row[i] = float(p.tensor.data()[i]);
    out.write(reinterpret_cast<const char*>(row.data()),
              std::streamsize(row.size() * sizeof(float)));
  }
  if (!out) throw IoError("checkpoint: write failed: " + path);
}

inline nlohmann::json read_checkpoint_header(const std::string& path,
                                             std::string* raw_file = nullptr) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("checkpoint: cannot open: " + path);
  std::string buf((std::istreambuf_iterator<char>(in)),
                  std::istreambuf_iterator<char>());
  std::size_t head_len = detail::json_header_length(buf);
  auto header = nlohmann::json::parse(buf.substr(0, head_len));
  int version = header.value("format_version", -1);
  if (version != kCheckpointFormatVersion)
    throw VersionError("checkpoint: format_version " +
                       std::to_string(version) + " in " + path +
                       ", this build reads version " +
                       std::to_string(kCheckpointFormatVersion));
  if (raw_file) *raw_file = std::move(buf);
  header["__data_offset"] = head_len;
  return header;
}

template <class Real>
GptModel<Real> load_checkpoint(const std::string& path) {
  std::string buf;
  auto header = read_checkpoint_header(path, &buf);
  const std::size_t data_start = header.at("__data_offset").get<std::size_t>();
  ModelConfig cfg = header.at("config").get<ModelConfig>();
  // Build the structure, then overwrite every tensor from the manifest.
  auto model = build_model<Real>(cfg, 0);
  auto params = model.parameters();
  for (const auto& entry : header.at("tensors")) {
    const std::string name = entry.at("name").get<std::string>();
    const Shape shape = entry.at("shape").get<Shape>();
    const std::uint64_t offset = entry.at("offset").get<std::uint64_t>();
    NamedParam<Real>* target = nullptr;
    for (auto& p : params)
      if (p.name == name) {
        target = &p;
        break;
      }
    if (!target)
      throw DataError("checkpoint: unknown tensor '" + name + "' in " + path);
    if (target->tensor.shape() != shape)
      throw DataError("checkpoint: tensor '" + name + "' has shape " +
                      format_shape(shape) + ", model expects " +
                      format_shape(target->tensor.shape()));
    const std::size_t bytes = target->tensor.size() * sizeof(float);
    if (data_start + offset + bytes > buf.size())
      throw DataError("checkpoint: truncated data for tensor '" + name + "'");
    std::vector<float> raw(target->tensor.size());
    std::memcpy(raw.data(), buf.data() + data_start + offset, bytes);
    for (std::size_t i = 0; i < raw.size(); ++i)
      target->tensor.data()[i] = Real(raw[i]);
  }
  return model;
}

}  // namespace lgpt
