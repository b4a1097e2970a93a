#include "rgbmark/core/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include "rgbmark/core/error.hpp"

namespace rgbmark {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'R', 'G', 'B', 'M', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put_le(std::string& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

template <typename T>
T get_le(const std::string& in, std::size_t pos) {
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    v |= static_cast<T>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  }
  return v;
}

torch::Tensor as_float_cpu(const torch::Tensor& t) {
  return t.detach().to(torch::kCPU, torch::kFloat32).contiguous();
}

}  // namespace

std::string to_string(Stage stage) {
  switch (stage) {
    case Stage::kInit:
      return "init";
    case Stage::kStage1:
      return "stage1";
    case Stage::kStage2:
      return "stage2";
  }
  return "init";
}

Stage stage_from_string(const std::string& name) {
  if (name == "init") return Stage::kInit;
  if (name == "stage1") return Stage::kStage1;
  if (name == "stage2") return Stage::kStage2;
  throw ConfigError("unknown stage marker: " + name);
}

const torch::Tensor* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return &t;
  }
  return nullptr;
}

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  json header;
  header["arch"] = ckpt.arch;
  header["stage"] = to_string(ckpt.stage);
  header["stage1_skipped"] = ckpt.stage1_skipped;
  header["seed"] = ckpt.seed;
  header["epochs"] = {{"stage1", ckpt.epochs_stage1}, {"stage2", ckpt.epochs_stage2}};
  header["extra"] = ckpt.extra;

  std::string payload;
  json entries = json::array();
  for (const auto& [name, tensor] : ckpt.tensors) {
    const auto t = as_float_cpu(tensor);
    const auto bytes = static_cast<std::size_t>(t.numel()) * sizeof(float);
    entries.push_back({{"name", name}, {"shape", t.sizes().vec()}, {"offset", payload.size()}, {"bytes", bytes}});
    const auto* p = t.data_ptr<float>();
    for (std::int64_t i = 0; i < t.numel(); ++i) {
      std::uint32_t bits;
      std::memcpy(&bits, p + i, sizeof(bits));
      put_le(payload, bits);
    }
  }
  header["tensors"] = entries;

  const std::string text = header.dump();
  std::string out(kMagic, sizeof(kMagic));
  put_le(out, kVersion);
  put_le(out, static_cast<std::uint64_t>(text.size()));
  out += text;
  out += payload;
  return out;
}

Checkpoint deserialize_checkpoint(const std::string& bytes) {
  constexpr std::size_t kPrefix = sizeof(kMagic) + 4 + 8;
  if (bytes.size() < kPrefix || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw ConfigError("not a checkpoint file (bad magic)");
  }
  const auto version = get_le<std::uint32_t>(bytes, 8);
  if (version != kVersion) throw ConfigError("unsupported checkpoint version " + std::to_string(version));
  const auto header_len = get_le<std::uint64_t>(bytes, 12);
  if (kPrefix + header_len > bytes.size()) throw ConfigError("truncated checkpoint header");
  json header;
  try {
    header = json::parse(bytes.substr(kPrefix, header_len));
  } catch (const json::exception& e) {
    throw ConfigError(std::string("corrupt checkpoint header: ") + e.what());
  }
  const std::size_t base = kPrefix + header_len;

  Checkpoint ckpt;
  try {
    ckpt.arch = header.at("arch");
    ckpt.stage = stage_from_string(header.at("stage").get<std::string>());
    ckpt.stage1_skipped = header.at("stage1_skipped").get<bool>();
    ckpt.seed = header.at("seed").get<std::uint64_t>();
    ckpt.epochs_stage1 = header.at("epochs").at("stage1").get<std::int64_t>();
    ckpt.epochs_stage2 = header.at("epochs").at("stage2").get<std::int64_t>();
    ckpt.extra = header.at("extra");
    for (const auto& e : header.at("tensors")) {
      const auto shape = e.at("shape").get<std::vector<std::int64_t>>();
      const auto offset = e.at("offset").get<std::size_t>();
      const auto nbytes = e.at("bytes").get<std::size_t>();
      if (base + offset + nbytes > bytes.size()) throw ConfigError("truncated checkpoint payload");
      auto t = torch::empty(shape, torch::kFloat32);
      if (static_cast<std::size_t>(t.numel()) * sizeof(float) != nbytes) {
        throw ConfigError("tensor size mismatch for " + e.at("name").get<std::string>());
      }
      auto* p = t.data_ptr<float>();
      for (std::int64_t i = 0; i < t.numel(); ++i) {
        const auto bits = get_le<std::uint32_t>(bytes, base + offset + static_cast<std::size_t>(i) * 4);
        std::memcpy(p + i, &bits, sizeof(bits));
      }
      ckpt.tensors.emplace_back(e.at("name").get<std::string>(), t);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed checkpoint header: ") + e.what());
  }
  return ckpt;
}

void write_file_atomic(const fs::path& path, const std::string& contents) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void save_checkpoint(const Checkpoint& ckpt, const fs::path& path) {
  write_file_atomic(path, serialize_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const fs::path& path) { return deserialize_checkpoint(read_file(path)); }

std::string fnv1a_hex(const void* data, std::size_t size) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < size; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string fingerprint(const NamedTensors& tensors) {
  std::string buf;
  for (const auto& [name, tensor] : tensors) {
    buf += name;
    buf.push_back('\0');
    const auto t = as_float_cpu(tensor);
    buf.append(reinterpret_cast<const char*>(t.data_ptr<float>()),
               static_cast<std::size_t>(t.numel()) * sizeof(float));
  }
  return fnv1a_hex(buf.data(), buf.size());
}

}  // namespace rgbmark
