#pragma once

// UTF-8 <-> code point conversion, matching normalization and digests.
//
// All offsets in this library count Unicode scalar values. Documents keep
// their text as UTF-8 and decode on demand.

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <openssl/evp.h>
#include <unicode/normalizer2.h>
#include <unicode/uchar.h>
#include <unicode/unistr.h>
#include <unicode/utf8.h>

#include "veille/error.hpp"

namespace veille::text {

inline std::u32string decode_utf8(std::string_view utf8) {
  std::u32string out;
  out.reserve(utf8.size());
  const auto* bytes = reinterpret_cast<const uint8_t*>(utf8.data());
  const auto length = static_cast<int32_t>(utf8.size());
  int32_t i = 0;
  while (i < length) {
    const int32_t at = i;
    UChar32 c = 0;
    U8_NEXT(bytes, i, length, c);
    if (c < 0) {
      throw EncodingError("invalid UTF-8 sequence at byte " + std::to_string(at));
    }
    out.push_back(static_cast<char32_t>(c));
  }
  return out;
}

inline std::string encode_utf8(std::u32string_view cps) {
  std::string out;
  out.reserve(cps.size());
  for (char32_t c : cps) {
    std::array<uint8_t, U8_MAX_LENGTH> buf{};
    int32_t n = 0;
    UBool error = false;
    U8_APPEND(buf.data(), n, U8_MAX_LENGTH, static_cast<UChar32>(c), error);
    if (error) throw EncodingError("code point is not a Unicode scalar value");
    out.append(reinterpret_cast<const char*>(buf.data()), static_cast<std::size_t>(n));
  }
  return out;
}

/// Number of scalar values in a UTF-8 string.
inline std::size_t length(std::string_view utf8) { return decode_utf8(utf8).size(); }

inline std::string slice(std::u32string_view text, std::size_t start, std::size_t end) {
  return encode_utf8(text.substr(start, end - start));
}

inline bool is_space(char32_t c) { return u_isUWhiteSpace(static_cast<UChar32>(c)); }

/// Apostrophe and quotation-mark variants collapse onto ASCII ' and ".
inline char32_t fold_quote(char32_t c) {
  switch (c) {
    case U'‘': case U'’': case U'‚': case U'‛':
    case U'′': case U'ʼ': case U'´': case U'`':
      return U'\'';
    case U'“': case U'”': case U'„': case U'‟':
    case U'«': case U'»': case U'″': case U'‹': case U'›':
      return U'"';
    default:
      return c;
  }
}

/// Text after NFC, quote folding and whitespace-run collapse. Each output
/// character remembers the source range [begin[i], end[i]) it came from.
struct NormalizedText {
  std::u32string chars;
  std::vector<std::size_t> begin;
  std::vector<std::size_t> end;

  std::size_t size() const noexcept { return chars.size(); }
};

namespace detail {

inline const icu::Normalizer2& nfc() {
  UErrorCode status = U_ZERO_ERROR;
  const icu::Normalizer2* n = icu::Normalizer2::getNFCInstance(status);
  if (U_FAILURE(status) || n == nullptr) throw Error("ICU NFC normalizer unavailable");
  return *n;
}

inline std::u32string nfc_segment(std::u32string_view seg) {
  if (seg.size() == 1 && seg[0] < 0x300) return std::u32string(seg);
  icu::UnicodeString u = icu::UnicodeString::fromUTF32(
      reinterpret_cast<const UChar32*>(seg.data()), static_cast<int32_t>(seg.size()));
  UErrorCode status = U_ZERO_ERROR;
  icu::UnicodeString n = nfc().normalize(u, status);
  if (U_FAILURE(status)) return std::u32string(seg);
  std::u32string out(static_cast<std::size_t>(n.countChar32()), U'\0');
  status = U_ZERO_ERROR;
  n.toUTF32(reinterpret_cast<UChar32*>(out.data()), static_cast<int32_t>(out.size()), status);
  return out;
}

}  // namespace detail

inline NormalizedText normalize(std::u32string_view src) {
  NormalizedText out;
  out.chars.reserve(src.size());
  out.begin.reserve(src.size());
  out.end.reserve(src.size());
  const auto& nfc = detail::nfc();
  bool in_space = false;
  std::size_t i = 0;
  while (i < src.size()) {
    // NFC is applied per canonical segment so every output char keeps a source range.
    std::size_t j = i + 1;
    while (j < src.size() && !nfc.hasBoundaryBefore(static_cast<UChar32>(src[j]))) ++j;
    for (char32_t c : detail::nfc_segment(src.substr(i, j - i))) {
      if (is_space(c)) {
        if (in_space) {
          out.end.back() = j;
          continue;
        }
        in_space = true;
        c = U' ';
      } else {
        in_space = false;
        c = fold_quote(c);
      }
      out.chars.push_back(c);
      out.begin.push_back(i);
      out.end.push_back(j);
    }
    i = j;
  }
  return out;
}

inline std::u32string normalized(std::u32string_view src) { return normalize(src).chars; }

inline bool normalized_equal(std::u32string_view a, std::u32string_view b) {
  return normalized(a) == normalized(b);
}

inline std::string sha256_hex(std::string_view data) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), md.data(), &len, EVP_sha256(), nullptr) != 1) {
    throw Error("SHA-256 digest failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(len * 2);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[md[i] >> 4]);
    out.push_back(kHex[md[i] & 0xF]);
  }
  return out;
}

}  // namespace veille::text
