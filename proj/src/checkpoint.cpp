// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The NuTime Authors

#include "nutime/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

#include "nutime/config.hpp"
#include "nutime/errors.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace nutime {

namespace {

constexpr char kMagic[4] = {'N', 'U', 'T', 'M'};
constexpr std::uint8_t kDtypeF32 = 1;

template <typename U>
void put(std::string& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff));
}

class Reader {
 public:
  explicit Reader(std::string_view b) : b_(b) {}

  template <typename U>
  U get(const char* what) {
    need(sizeof(U), what);
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(b_[pos_ + i])) << (8 * i);
    pos_ += sizeof(U);
    return static_cast<U>(v);
  }
  std::string_view bytes(std::uint64_t n, const char* what) {
    need(n, what);
    auto s = b_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return b_.size() - pos_; }

 private:
  void need(std::uint64_t n, const char* what) {
    if (n > remaining()) throw DataError(std::string("checkpoint truncated while reading ") + what);
  }
  std::string_view b_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_checkpoint(const Checkpoint& ckpt) {
  std::string out(kMagic, 4);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint64_t>(out, ckpt.metadata.size());
  out += ckpt.metadata;
  put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
  std::uint64_t offset = 0;
  std::set<std::string> seen;
  for (const auto& t : ckpt.tensors) {
    if (!seen.insert(t.name).second) throw UsageError("checkpoint: duplicate tensor " + t.name);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.name.size()));
    out += t.name;
    out.push_back(static_cast<char>(kDtypeF32));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.value.rank()));
    for (std::size_t d : t.value.shape()) put<std::uint64_t>(out, d);
    const std::uint64_t nbytes = t.value.size() * 4;
    put<std::uint64_t>(out, offset);
    put<std::uint64_t>(out, nbytes);
    offset += nbytes;
  }
  put<std::uint64_t>(out, offset);
  for (const auto& t : ckpt.tensors) {
    for (float v : t.value.data()) put<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

Checkpoint decode_checkpoint(std::string_view bytes) {
  Reader r(bytes);
  if (r.bytes(4, "magic") != std::string_view(kMagic, 4)) throw DataError("checkpoint: bad magic (not a NUTM file)");
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw DataError("checkpoint: format version " + std::to_string(version) + " is not supported (expected " +
                    std::to_string(kCheckpointVersion) + ")");
  }
  Checkpoint c;
  const auto meta_len = r.get<std::uint64_t>("metadata length");
  c.metadata = std::string(r.bytes(meta_len, "metadata"));
  const auto count = r.get<std::uint32_t>("tensor count");

  struct Entry {
    std::string name;
    Shape shape;
    std::uint64_t offset, nbytes;
  };
  std::vector<Entry> dir;
  std::set<std::string> names;
  std::uint64_t expected_offset = 0;
  for (std::uint32_t i = 0; i < count; ++i) {
    Entry e;
    const auto len = r.get<std::uint32_t>("tensor name length");
    e.name = std::string(r.bytes(len, "tensor name"));
    if (!names.insert(e.name).second) throw DataError("checkpoint: duplicate tensor " + e.name);
    const auto dtype = r.get<std::uint8_t>("dtype");
    if (dtype != kDtypeF32) throw DataError("checkpoint: tensor " + e.name + " has unsupported dtype");
    const auto ndim = r.get<std::uint32_t>("rank");
    if (ndim > 8) throw DataError("checkpoint: tensor " + e.name + " has implausible rank");
    std::uint64_t numel = 1;
    for (std::uint32_t k = 0; k < ndim; ++k) {
      const auto d = r.get<std::uint64_t>("dimension");
      if (d != 0 && numel > (std::uint64_t{1} << 40) / d) throw DataError("checkpoint: tensor " + e.name + " too large");
      numel *= d;
      e.shape.push_back(static_cast<std::size_t>(d));
    }
    e.offset = r.get<std::uint64_t>("offset");
    e.nbytes = r.get<std::uint64_t>("byte count");
    if (e.nbytes != numel * 4) throw DataError("checkpoint: tensor " + e.name + " byte count disagrees with shape");
    if (e.offset != expected_offset) {
      throw DataError("checkpoint: tensor " + e.name + " offset " + std::to_string(e.offset) +
                      " overlaps or leaves a gap (expected " + std::to_string(expected_offset) + ")");
    }
    expected_offset += e.nbytes;
    dir.push_back(std::move(e));
  }
  const auto payload_len = r.get<std::uint64_t>("payload length");
  if (payload_len != expected_offset) throw DataError("checkpoint: payload length disagrees with directory");
  if (r.remaining() < payload_len) throw DataError("checkpoint truncated: payload shorter than declared");
  if (r.remaining() > payload_len) throw DataError("checkpoint: trailing bytes after payload");
  const std::string_view payload = r.bytes(payload_len, "payload");
  for (const auto& e : dir) {
    Tensor<float> t(e.shape);
    auto data = t.data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      std::uint32_t bits = 0;
      for (std::size_t k = 0; k < 4; ++k) {
        bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(payload[e.offset + 4 * i + k])) << (8 * k);
      }
      data[i] = std::bit_cast<float>(bits);
    }
    c.tensors.push_back({e.name, std::move(t)});
  }
  return c;
}

void save_checkpoint(const Checkpoint& ckpt, const fs::path& path) {
  const std::string bytes = encode_checkpoint(ckpt);
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed: " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place: " + ec.message());
}

Checkpoint load_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return decode_checkpoint(ss.str());
}

template <typename T>
Checkpoint model_checkpoint(const Model<T>& model, const std::string& extra_metadata_json) {
  json meta;
  try {
    meta = json::parse(extra_metadata_json);
  } catch (const json::exception& e) {
    throw UsageError(std::string("checkpoint metadata: ") + e.what());
  }
  if (!meta.is_object()) throw UsageError("checkpoint metadata must be a JSON object");
  meta["model"] = json::parse(model_config_to_json(model.config));
  Checkpoint c;
  c.metadata = meta.dump();
  for (const auto& [name, var] : model.params) c.tensors.push_back({name, var.value().template cast<float>()});
  return c;
}

template <typename T>
Model<T> model_from_checkpoint(const Checkpoint& ckpt) {
  json meta;
  try {
    meta = json::parse(ckpt.metadata);
  } catch (const json::exception& e) {
    throw DataError(std::string("checkpoint metadata is not valid JSON: ") + e.what());
  }
  if (!meta.is_object() || !meta.contains("model")) throw DataError("checkpoint metadata lacks a model config");
  ModelConfig cfg;
  try {
    cfg = model_config_from_json(meta["model"].dump());
  } catch (const UsageError& e) {
    throw DataError(std::string("checkpoint: ") + e.what());
  }
  Model<T> m = create_model<T>(cfg, 0);
  if (ckpt.tensors.size() != m.params.size()) {
    throw DataError("checkpoint holds " + std::to_string(ckpt.tensors.size()) + " tensors, model expects " +
                    std::to_string(m.params.size()));
  }
  for (const auto& t : ckpt.tensors) {
    if (!m.params.contains(t.name)) throw DataError("checkpoint: unexpected tensor " + t.name);
    if (m.params.value(t.name).shape() != t.value.shape()) {
      throw DataError("checkpoint: tensor " + t.name + " has shape " + shape_str(t.value.shape()) + ", expected " +
                      shape_str(m.params.value(t.name).shape()));
    }
    if (!t.value.all_finite()) throw DataError("checkpoint: tensor " + t.name + " holds non-finite values");
    m.params.assign(t.name, t.value.template cast<T>());
  }
  return m;
}

template Checkpoint model_checkpoint<float>(const Model<float>&, const std::string&);
template Checkpoint model_checkpoint<double>(const Model<double>&, const std::string&);
template Model<float> model_from_checkpoint<float>(const Checkpoint&);
template Model<double> model_from_checkpoint<double>(const Checkpoint&);

}  // namespace nutime
