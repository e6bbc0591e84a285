#pragma once

#include <array>
#include <cstdint>
#include <string>

namespace once {

using Digest = std::array<uint8_t, 32>;

// Incremental SHA-256 (OpenSSL-backed).
class Sha256 {
 public:
  Sha256();
  ~Sha256();
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;

  void update(const void* data, size_t len);
  void update(const std::string& s) { update(s.data(), s.size()); }
  Digest finish();

 private:
  void* ctx_;
};

Digest sha256(const std::string& bytes);
std::string digest_hex(const Digest& d);

}  // namespace once
