#include "dasgil/digest.hpp"

#include <openssl/evp.h>

#include <fstream>
#include <memory>
#include <nlohmann/json.hpp>

#include "dasgil/binio.hpp"

namespace dasgil {

Digest sha256(const void* data, std::size_t size) {
  Digest out{};
  unsigned int len = 0;
  require(EVP_Digest(data, size, out.data(), &len, EVP_sha256(), nullptr) == 1 && len == out.size(), ErrorCode::IoError,
          "SHA-256 computation failed");
  return out;
}

std::string to_hex(const Digest& d) {
  static const char* hex = "0123456789abcdef";
  std::string s;
  for (auto b : d) {
    s += hex[b >> 4];
    s += hex[b & 15];
  }
  return s;
}

Digest files_digest(const std::filesystem::path& root, const std::vector<std::filesystem::path>& files) {
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), &EVP_MD_CTX_free);
  require(ctx && EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) == 1, ErrorCode::IoError, "SHA-256 init failed");
  std::vector<char> buf(1 << 16);
  for (const auto& f : files) {
    const std::string name = f.generic_string();
    const std::uint32_t len = std::uint32_t(name.size());
    EVP_DigestUpdate(ctx.get(), &len, sizeof len);
    EVP_DigestUpdate(ctx.get(), name.data(), name.size());
    std::ifstream in(f.is_absolute() ? f : root / f, std::ios::binary);
    require(in.good(), ErrorCode::MissingFile, (root / f).string());
    while (in) {
      in.read(buf.data(), std::streamsize(buf.size()));
      if (in.gcount() > 0) EVP_DigestUpdate(ctx.get(), buf.data(), std::size_t(in.gcount()));
    }
  }
  Digest out{};
  unsigned int n = 0;
  require(EVP_DigestFinal_ex(ctx.get(), out.data(), &n) == 1 && n == out.size(), ErrorCode::IoError,
          "SHA-256 computation failed");
  return out;
}

Digest params_digest(const net::ModelParams<float>& params) {
  binio::Writer w;
  w.str(nlohmann::json(params.config).dump());
  for (const auto* c : {&params.extractor, &params.depth_gen, &params.seg_gen, &params.discriminator}) {
    w.u32(std::uint32_t(c->size()));
    for (const auto& [name, t] : *c) {
      w.str(name);
      for (int d : {t.shape.n, t.shape.c, t.shape.h, t.shape.w}) w.i32(d);
      w.f32(t.data.data(), std::size_t(t.data.size()));
    }
  }
  return sha256(w.buffer().data(), w.buffer().size());
}

}  // namespace dasgil
