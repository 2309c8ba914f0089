#ifndef EVSSM_DIGEST_HPP
#define EVSSM_DIGEST_HPP

#include <cstdint>
#include <fstream>
#include <span>
#include <string>

#include "evssm/common.hpp"

namespace evssm {

// FNV-1a 64-bit content digest; a reproducibility fingerprint, not a
// cryptographic hash.
inline std::uint64_t fnv1a64(std::span<const char> bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : bytes) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string digest_hex(std::span<const char> bytes) {
  static const char* hexd = "0123456789abcdef";
  std::uint64_t h = fnv1a64(bytes);
  std::string out = "fnv1a64:";
  for (int shift = 60; shift >= 0; shift -= 4) out += hexd[(h >> shift) & 0xF];
  return out;
}

inline std::string file_digest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Errc::io_failure, "cannot open for digest: " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return digest_hex(bytes);
}

}  // namespace evssm

#endif  // EVSSM_DIGEST_HPP
