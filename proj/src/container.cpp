#include "container.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

SBCB_NAMESPACE_BEGIN

namespace {

constexpr char kMagic[8] = {'S', 'B', 'C', 'B', 'T', 'N', 'S', 'R'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void read_values(std::ifstream& in, Tensor& t, const std::filesystem::path& path) {
  std::vector<T> buf(t.numel());
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(T)));
  if (!in) throw std::runtime_error(path.string() + ": truncated tensor data");
  for (std::size_t i = 0; i < buf.size(); ++i) t[i] = static_cast<real>(buf[i]);
}

}  // namespace

const Tensor* Container::find(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return &t;
  return nullptr;
}

void write_container(const std::filesystem::path& path, const nlohmann::json& meta,
                     const std::vector<std::pair<std::string, const Tensor*>>& tensors) {
  nlohmann::json header{{"meta", meta}, {"dtype", kRealTypeName}, {"tensors", nlohmann::json::array()}};
  for (const auto& [name, t] : tensors) {
    const Shape& s = t->shape();
    header["tensors"].push_back({{"name", name}, {"shape", {s.n, s.c, s.h, s.w}}});
  }
  const std::string text = header.dump();
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  // write beside the target and rename, so a crash never leaves half a file
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    const std::uint64_t len = text.size();
    out.write(kMagic, sizeof kMagic);
    out.write(reinterpret_cast<const char*>(&kVersion), sizeof kVersion);
    out.write(reinterpret_cast<const char*>(&len), sizeof len);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& [name, t] : tensors) {
      out.write(reinterpret_cast<const char*>(t->data()), static_cast<std::streamsize>(t->numel() * sizeof(real)));
    }
    if (!out) throw std::runtime_error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Container read_container(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  char magic[8];
  std::uint32_t version = 0;
  std::uint64_t len = 0;
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof magic) != 0) {
    throw std::runtime_error(path.string() + " is not a checkpoint or inference artifact");
  }
  in.read(reinterpret_cast<char*>(&version), sizeof version);
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!in || version != kVersion) throw std::runtime_error(path.string() + ": unsupported container version");
  if (len > (1ull << 30)) throw std::runtime_error(path.string() + ": corrupt header");
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw std::runtime_error(path.string() + ": truncated header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::runtime_error(path.string() + ": corrupt header: " + e.what());
  }
  Container c;
  c.meta = header.at("meta");
  const std::string dtype = header.at("dtype");
  if (dtype != "float32" && dtype != "float64") throw std::runtime_error(path.string() + ": unknown dtype " + dtype);
  for (const auto& entry : header.at("tensors")) {
    const auto& s = entry.at("shape");
    Tensor t(Shape{s.at(0).get<int>(), s.at(1).get<int>(), s.at(2).get<int>(), s.at(3).get<int>()});
    if (dtype == "float32") read_values<float>(in, t, path);
    else read_values<double>(in, t, path);
    c.tensors.emplace_back(entry.at("name").get<std::string>(), std::move(t));
  }
  return c;
}

SBCB_NAMESPACE_END
