#pragma once

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "unimotion/errors.hpp"
#include "unimotion/nn/core.hpp"
#include "unimotion/types.hpp"

namespace unimotion {

constexpr const char* kCheckpointVersion = "unimotion-ckpt-v1";

static_assert(std::endian::native == std::endian::little,
              "checkpoint container stores little-endian tensors");

/// Self-describing container: JSON header (version, config, metadata, tensor
/// directory) followed by row-major little-endian float32 payload.
struct Checkpoint {
  nlohmann::json config = nlohmann::json::object();
  nlohmann::json meta = nlohmann::json::object();
  struct Tensor {
    std::string name;
    Index rows = 0, cols = 0;
    std::vector<float> data;  // row-major
  };
  std::vector<Tensor> tensors;

  const Tensor* find(const std::string& name) const {
    for (const auto& t : tensors)
      if (t.name == name) return &t;
    return nullptr;
  }

  void save(const std::filesystem::path& path) const {
    nlohmann::json header;
    header["version"] = kCheckpointVersion;
    header["config"] = config;
    header["meta"] = meta;
    auto dir = nlohmann::json::array();
    uint64_t offset = 0;
    for (const auto& t : tensors) {
      dir.push_back({{"name", t.name},
                     {"rows", t.rows},
                     {"cols", t.cols},
                     {"dtype", "f32"},
                     {"offset", offset}});
      offset += t.data.size() * sizeof(float);
    }
    header["tensors"] = dir;
    const std::string head = header.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw InvalidInput("cannot write checkpoint: " + path.string());
    out.write("UMCK", 4);
    const uint64_t head_len = head.size();
    out.write(reinterpret_cast<const char*>(&head_len), sizeof(head_len));
    out.write(head.data(), static_cast<std::streamsize>(head.size()));
    for (const auto& t : tensors)
      out.write(reinterpret_cast<const char*>(t.data.data()),
                static_cast<std::streamsize>(t.data.size() * sizeof(float)));
  }

  static Checkpoint load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IncompatibleCheckpoint("checkpoint not found: " + path.string());
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "UMCK", 4) != 0)
      throw IncompatibleCheckpoint("bad checkpoint magic: " + path.string());
    uint64_t head_len = 0;
    in.read(reinterpret_cast<char*>(&head_len), sizeof(head_len));
    std::string head(head_len, '\0');
    in.read(head.data(), static_cast<std::streamsize>(head_len));
    if (!in) throw IncompatibleCheckpoint("truncated checkpoint header");
    nlohmann::json header;
    try {
      header = nlohmann::json::parse(head);
    } catch (const std::exception& e) {
      throw IncompatibleCheckpoint("unparseable checkpoint header: " +
                                   std::string(e.what()));
    }
    if (header.value("version", "") != kCheckpointVersion)
      throw IncompatibleCheckpoint("unsupported checkpoint version");

    Checkpoint ck;
    ck.config = header.value("config", nlohmann::json::object());
    ck.meta = header.value("meta", nlohmann::json::object());
    for (const auto& d : header.value("tensors", nlohmann::json::array())) {
      Tensor t;
      t.name = d.at("name").get<std::string>();
      t.rows = d.at("rows").get<Index>();
      t.cols = d.at("cols").get<Index>();
      t.data.resize(static_cast<size_t>(t.rows * t.cols));
      in.read(reinterpret_cast<char*>(t.data.data()),
              static_cast<std::streamsize>(t.data.size() * sizeof(float)));
      if (!in) throw IncompatibleCheckpoint("truncated tensor payload: " + t.name);
      ck.tensors.push_back(std::move(t));
    }
    return ck;
  }
};

/// Append every parameter tensor of a model to the checkpoint, cast to f32,
/// row-major regardless of in-memory layout.
template <typename Scalar, typename Model>
void pack_tensors(Model& model, Checkpoint& ck, const std::string& prefix = "") {
  model.visit(prefix, [&](const std::string& name, Scalar* data, Index rows, Index cols) {
    Checkpoint::Tensor t;
    t.name = name;
    t.rows = rows;
    t.cols = cols;
    t.data.resize(static_cast<size_t>(rows * cols));
    // in-memory tensors are column-major Eigen buffers
    for (Index r = 0; r < rows; ++r)
      for (Index c = 0; c < cols; ++c)
        t.data[static_cast<size_t>(r * cols + c)] =
            static_cast<float>(data[c * rows + r]);
    ck.tensors.push_back(std::move(t));
  });
}

/// Restore every parameter tensor by name; shapes must match exactly.
template <typename Scalar, typename Model>
void unpack_tensors(Model& model, const Checkpoint& ck, const std::string& prefix = "") {
  model.visit(prefix, [&](const std::string& name, Scalar* data, Index rows, Index cols) {
    const auto* t = ck.find(name);
    if (!t)
      throw IncompatibleCheckpoint("checkpoint missing tensor: " + name);
    if (t->rows != rows || t->cols != cols)
      throw IncompatibleCheckpoint("checkpoint shape mismatch for " + name);
    for (Index r = 0; r < rows; ++r)
      for (Index c = 0; c < cols; ++c)
        data[c * rows + r] =
            static_cast<Scalar>(t->data[static_cast<size_t>(r * cols + c)]);
  });
}

}  // namespace unimotion
