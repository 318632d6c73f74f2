#include "eegrecon/io.hpp"

#include <openssl/evp.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <iterator>
#include <sstream>

#include "eegrecon/error.hpp"

namespace eegrecon {

static_assert(std::endian::native == std::endian::little, "checkpoint and trial codecs assume little-endian hosts");

namespace {

constexpr char kMagic[8] = {'E', 'E', 'G', 'R', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

class Sha256 {
 public:
  Sha256() : ctx_(EVP_MD_CTX_new()) { EVP_DigestInit_ex(ctx_, EVP_sha256(), nullptr); }
  ~Sha256() { EVP_MD_CTX_free(ctx_); }
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;

  void update(const void* data, std::size_t size) { EVP_DigestUpdate(ctx_, data, size); }

  std::string hex() {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx_, digest, &len);
    std::ostringstream os;
    for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
    return os.str();
  }

 private:
  EVP_MD_CTX* ctx_;
};

}  // namespace

std::string read_text(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(Errc::IoError, "cannot read " + path.string());
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) fail(Errc::IoError, "cannot write " + path.string());
  f << text;
}

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(Errc::IoError, "cannot read " + path.string());
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

std::string sha256_hex(const void* data, std::size_t size) {
  Sha256 h;
  h.update(data, size);
  return h.hex();
}

std::string sha256_hex(const std::string& text) { return sha256_hex(text.data(), text.size()); }

std::string sha256_file(const std::filesystem::path& path) {
  const auto bytes = read_bytes(path);
  return sha256_hex(bytes.data(), bytes.size());
}

std::string hash_params(const nn::ParamList& params) {
  Sha256 h;
  for (const auto& p : params) {
    h.update(p.name.data(), p.name.size() + 1);
    const auto& shape = p.var->value.shape;
    h.update(shape.data(), shape.size() * sizeof(int));
    h.update(p.var->value.data.data(), p.var->value.data.size() * sizeof(double));
  }
  return h.hex();
}

std::string base64_encode(const std::vector<std::uint8_t>& bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(),
                                static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

void save_checkpoint(const std::filesystem::path& path, const std::string& kind, const Json& config,
                     const nn::ParamList& params) {
  Json header;
  header["kind"] = kind;
  header["config"] = config;
  Json tensors = Json::array();
  std::size_t offset = 0;
  for (const auto& p : params) {
    tensors.push_back({{"name", p.name}, {"shape", p.var->value.shape}, {"offset", offset}});
    offset += p.var->value.size();
  }
  header["tensors"] = tensors;
  const std::string text = header.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) fail(Errc::IoError, "cannot write " + path.string());
  const std::uint64_t len = text.size();
  f.write(kMagic, sizeof kMagic);
  f.write(reinterpret_cast<const char*>(&kVersion), sizeof kVersion);
  f.write(reinterpret_cast<const char*>(&len), sizeof len);
  f.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& p : params)
    f.write(reinterpret_cast<const char*>(p.var->value.data.data()),
            static_cast<std::streamsize>(p.var->value.size() * sizeof(double)));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const auto bytes = read_bytes(path);
  constexpr std::size_t kPrefix = sizeof kMagic + sizeof(std::uint32_t) + sizeof(std::uint64_t);
  if (bytes.size() < kPrefix || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
    fail(Errc::IoError, path.string() + " is not a checkpoint");
  }
  std::uint32_t version = 0;
  std::uint64_t len = 0;
  std::memcpy(&version, bytes.data() + 8, sizeof version);
  std::memcpy(&len, bytes.data() + 12, sizeof len);
  if (version != kVersion || kPrefix + len > bytes.size()) fail(Errc::IoError, "unsupported checkpoint " + path.string());
  const Json header = Json::parse(bytes.begin() + kPrefix, bytes.begin() + kPrefix + len);
  Checkpoint ckpt;
  ckpt.kind = header.at("kind").get<std::string>();
  ckpt.config = header.at("config");
  const std::size_t blob = kPrefix + len;
  for (const auto& t : header.at("tensors")) {
    nn::Shape shape = t.at("shape").get<nn::Shape>();
    const std::size_t off = t.at("offset").get<std::size_t>();
    nn::Tensor tensor(shape);
    const std::size_t nbytes = tensor.size() * sizeof(double);
    if (blob + off * sizeof(double) + nbytes > bytes.size()) fail(Errc::IoError, "truncated checkpoint " + path.string());
    std::memcpy(tensor.data.data(), bytes.data() + blob + off * sizeof(double), nbytes);
    ckpt.tensors.emplace(t.at("name").get<std::string>(), std::move(tensor));
  }
  return ckpt;
}

void assign_params(const Checkpoint& ckpt, const nn::ParamList& params) {
  for (const auto& p : params) {
    auto it = ckpt.tensors.find(p.name);
    if (it == ckpt.tensors.end()) fail(Errc::IoError, "checkpoint lacks tensor " + p.name);
    if (it->second.shape != p.var->value.shape) {
      fail(Errc::IoError, "checkpoint tensor " + p.name + " has shape " + nn::shape_str(it->second.shape));
    }
    p.var->value.data = it->second.data;
  }
}

}  // namespace eegrecon
