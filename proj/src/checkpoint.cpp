#include "evident/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <map>

#include "evident/error.hpp"

namespace evident::checkpoint {

namespace {

constexpr char kMagic[8] = {'E', 'V', 'D', 'C', 'K', 'P', 'T', '1'};

std::map<std::string, torch::Tensor> named_state(const torch::nn::Module& m) {
  std::map<std::string, torch::Tensor> out;
  for (const auto& p : m.named_parameters(true)) out[p.key()] = p.value();
  for (const auto& b : m.named_buffers(true)) out[b.key()] = b.value();
  return out;
}

const char* dtype_name(const torch::Tensor& t) {
  if (t.scalar_type() == torch::kFloat) return "float32";
  if (t.scalar_type() == torch::kLong) return "int64";
  if (t.scalar_type() == torch::kDouble) return "float64";
  throw ContractError("checkpoint cannot store tensors of this dtype");
}

struct Archive {
  nlohmann::json header;
  std::string payload;
};

Archive read_archive(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  char magic[8];
  std::uint64_t len = 0;
  if (!in.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0) {
    throw IoError(path.string() + " is not a checkpoint archive");
  }
  if (!in.read(reinterpret_cast<char*>(&len), sizeof(len)) || len > (1ULL << 32)) {
    throw IoError("corrupt checkpoint header in " + path.string());
  }
  std::string text(len, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(len))) throw IoError("truncated checkpoint " + path.string());
  Archive a;
  try {
    a.header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("checkpoint header is not JSON: " + std::string(e.what()));
  }
  const int version = a.header.value("schema_version", 0);
  if (version < 1 || version > kSchemaVersion) {
    throw IoError("unsupported checkpoint schema_version " + std::to_string(version));
  }
  a.payload.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  return a;
}

}  // namespace

void save(const std::filesystem::path& path, const torch::nn::Module& module, const nlohmann::json& config) {
  nlohmann::json table = nlohmann::json::array();
  std::string payload;
  for (const auto& [name, t] : named_state(module)) {
    const auto c = t.detach().contiguous().cpu();
    const auto bytes = static_cast<std::size_t>(c.numel()) * c.element_size();
    table.push_back({{"name", name}, {"dtype", dtype_name(c)}, {"shape", c.sizes().vec()},
                     {"offset", payload.size()}, {"bytes", bytes}});
    payload.append(static_cast<const char*>(c.data_ptr()), bytes);
  }
  const nlohmann::json header{{"schema_version", kSchemaVersion}, {"config", config}, {"tensors", table}};
  const std::string text = header.dump();
  if (!path.parent_path().empty()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  const std::uint64_t len = text.size();
  out.write(kMagic, 8);
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (!out) throw IoError("failed writing checkpoint " + path.string());
}

nlohmann::json read_config(const std::filesystem::path& path) { return read_archive(path).header.at("config"); }

void load_into(const std::filesystem::path& path, torch::nn::Module& module) {
  const auto a = read_archive(path);
  auto state = named_state(module);
  const auto& table = a.header.at("tensors");
  if (table.size() != state.size()) {
    throw ContractError("checkpoint holds " + std::to_string(table.size()) + " tensors, model expects " +
                        std::to_string(state.size()));
  }
  torch::NoGradGuard ng;
  for (const auto& entry : table) {
    const auto name = entry.at("name").get<std::string>();
    auto it = state.find(name);
    if (it == state.end()) throw ContractError("checkpoint tensor '" + name + "' has no counterpart in the model");
    auto& dst = it->second;
    const auto shape = entry.at("shape").get<std::vector<std::int64_t>>();
    if (dst.sizes().vec() != shape) throw ContractError("shape mismatch for checkpoint tensor '" + name + "'");
    if (entry.at("dtype").get<std::string>() != dtype_name(dst)) {
      throw ContractError("dtype mismatch for checkpoint tensor '" + name + "'");
    }
    const auto offset = entry.at("offset").get<std::size_t>();
    const auto bytes = entry.at("bytes").get<std::size_t>();
    if (offset + bytes > a.payload.size() || bytes != static_cast<std::size_t>(dst.numel()) * dst.element_size()) {
      throw IoError("checkpoint payload out of range for '" + name + "'");
    }
    auto src = torch::empty_like(dst, torch::TensorOptions().device(torch::kCPU));
    std::memcpy(src.data_ptr(), a.payload.data() + offset, bytes);
    dst.copy_(src);
  }
}

}  // namespace evident::checkpoint
