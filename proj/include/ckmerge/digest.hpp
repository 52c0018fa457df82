#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <openssl/evp.h>

#include "ckmerge/errors.hpp"

namespace ckmerge {

/// SHA-256 of a byte buffer, as lowercase hex.
inline std::string sha256_hex(const void* data, std::size_t size) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int digest_len = 0;
  if (EVP_Digest(data, size, digest, &digest_len, EVP_sha256(), nullptr) != 1)
    throw std::logic_error("SHA-256 computation failed");
  static constexpr char hex[] = "0123456789abcdef";
  std::string out(digest_len * 2, '0');
  for (unsigned int i = 0; i < digest_len; ++i) {
    out[2 * i] = hex[digest[i] >> 4];
    out[2 * i + 1] = hex[digest[i] & 0xF];
  }
  return out;
}

/// Streaming SHA-256 of a file's contents, as lowercase hex.
inline std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw IoError("cannot open \"" + path.string() + "\" for digest");
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx) throw std::logic_error("SHA-256 context allocation failed");
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  std::vector<char> buf(1 << 20);
  while (file) {
    file.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    const std::streamsize n = file.gcount();
    if (n > 0) EVP_DigestUpdate(ctx, buf.data(), static_cast<std::size_t>(n));
  }
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int digest_len = 0;
  EVP_DigestFinal_ex(ctx, digest, &digest_len);
  EVP_MD_CTX_free(ctx);
  static constexpr char hex[] = "0123456789abcdef";
  std::string out(digest_len * 2, '0');
  for (unsigned int i = 0; i < digest_len; ++i) {
    out[2 * i] = hex[digest[i] >> 4];
    out[2 * i + 1] = hex[digest[i] & 0xF];
  }
  return out;
}

}  // namespace ckmerge
