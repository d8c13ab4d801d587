#pragma once

#include <openssl/evp.h>

#include <array>
#include <atomic>
#include <cstdint>
#include <functional>
#include <iostream>
#include <mutex>
#include <stdexcept>
#include <string>
#include <string_view>

namespace textimg {

/// Raised for malformed input data (embedding files, CSV rows, PNG streams, sidecars).
class ParseError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Raised when EncodingParams or other configuration violates an invariant.
class InvalidParams : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

/// Raised for failures while encoding, decoding or writing outputs.
class EncodeError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

enum class LogLevel { debug = 0, info = 1, warn = 2, error = 3, off = 4 };

namespace log {

inline std::atomic<LogLevel>& threshold() {
  static std::atomic<LogLevel> level{LogLevel::warn};
  return level;
}

inline void write(LogLevel level, std::string_view msg) {
  if (level < threshold().load())
    return;
  static std::mutex mu;
  static constexpr const char* names[] = {"debug", "info", "warning", "error"};
  std::lock_guard lock(mu);
  std::cerr << names[static_cast<int>(level)] << ": " << msg << '\n';
}

inline void warn(std::string_view msg) { write(LogLevel::warn, msg); }
inline void info(std::string_view msg) { write(LogLevel::info, msg); }

} // namespace log

/// Sink for non-fatal diagnostics; the default forwards to the process log.
using WarningSink = std::function<void(std::string_view)>;

inline WarningSink default_warning_sink() {
  return [](std::string_view msg) { log::warn(msg); };
}

/// Incremental SHA-256, hex output. Used for all params/table/stats digests.
class Sha256 {
public:
  Sha256() : ctx_(EVP_MD_CTX_new()) {
    if (ctx_ == nullptr || EVP_DigestInit_ex(ctx_, EVP_sha256(), nullptr) != 1)
      throw std::runtime_error("sha256: init failed");
  }
  ~Sha256() { EVP_MD_CTX_free(ctx_); }
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;

  Sha256& update(std::string_view bytes) {
    EVP_DigestUpdate(ctx_, bytes.data(), bytes.size());
    return *this;
  }

  std::string hex() {
    std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx_, md.data(), &len);
    static constexpr char digits[] = "0123456789abcdef";
    std::string out;
    out.reserve(len * 2);
    for (unsigned int i = 0; i < len; ++i) {
      out.push_back(digits[md[i] >> 4]);
      out.push_back(digits[md[i] & 0xF]);
    }
    return out;
  }

private:
  EVP_MD_CTX* ctx_;
};

inline std::string sha256_hex(std::string_view bytes) { return Sha256{}.update(bytes).hex(); }

} // namespace textimg
