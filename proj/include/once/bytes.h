#pragma once

#include <string>

#include "once/common.h"

namespace once {

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& bytes);

// Bounds-checked reader over an in-memory buffer; errors name the file kind.
class ByteReader {
 public:
  ByteReader(const std::string& buf, std::string what)
      : buf_(buf), what_(std::move(what)) {}
  // The buffer must outlive the reader.
  ByteReader(std::string&&, std::string) = delete;

  uint32_t u32() {
    need(4);
    const uint32_t v = get_u32(buf_.data() + pos_);
    pos_ += 4;
    return v;
  }

  float f32() {
    need(4);
    const float v = get_f32(buf_.data() + pos_);
    pos_ += 4;
    return v;
  }

  std::string bytes(size_t n) {
    need(n);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  void f32_block(float* dst, size_t n) {
    need(n * 4);
    for (size_t i = 0; i < n; ++i) dst[i] = get_f32(buf_.data() + pos_ + i * 4);
    pos_ += n * 4;
  }

  void expect_done() const {
    if (pos_ != buf_.size()) {
      fail(what_, ": ", buf_.size() - pos_, " trailing bytes");
    }
  }

 private:
  void need(size_t n) const {
    if (pos_ + n > buf_.size()) fail(what_, ": truncated file");
  }

  const std::string& buf_;
  size_t pos_ = 0;
  std::string what_;
};

}  // namespace once
