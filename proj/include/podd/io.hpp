#pragma once

// Artifact files.
//
// PODD1 (poster):  magic "PODDv1\0\0", u32 height, u32 width, u32 channels,
//                  then height·width·channels f32, row-major, channel-last.
// PODL1 (labels):  magic "PODLv1\0\0", u32 rows, u32 cols, u32 n,
//                  then rows·cols·n f32.
// All integers and floats are little-endian. Writes go to a temporary file in
// the same directory and are renamed into place.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "podd/labeling.hpp"
#include "podd/poster.hpp"

namespace podd {

void write_file_atomic(const std::filesystem::path& path, std::span<const char> bytes);
void write_text_atomic(const std::filesystem::path& path, const std::string& text);
std::vector<char> read_file(const std::filesystem::path& path);

std::vector<char> encode_poster(const Poster& poster);
Poster decode_poster(std::span<const char> bytes);
void save_poster(const std::filesystem::path& path, const Poster& poster);
Poster load_poster(const std::filesystem::path& path);

std::vector<char> encode_labels(const LabelTensor& labels);
LabelTensor decode_labels(std::span<const char> bytes);
void save_labels(const std::filesystem::path& path, const LabelTensor& labels);
LabelTensor load_labels(const std::filesystem::path& path);

/// 8-bit RGB (channels = 3) or grayscale (channels = 1) PNG.
void write_png(const std::filesystem::path& path, int width, int height, int channels,
               std::span<const std::uint8_t> pixels);

/// Per-channel affine map of [min, max] onto [0, 255]. Posters with other
/// than 1 or 3 channels are shown through their first channel.
void export_poster_png(const std::filesystem::path& path, const Poster& poster);

/// Stable 64-bit FNV-1a hash, hex encoded.
std::string fnv1a_hex(std::string_view text);

// Little-endian scalar serialization used by the checkpoint format.
class ByteWriter {
 public:
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f32(float v);
  void f64(double v);
  void raw(std::string_view s);
  void f64s(std::span<const double> v);
  const std::vector<char>& bytes() const { return bytes_; }

 private:
  std::vector<char> bytes_;
};

class ByteReader {
 public:
  ByteReader(std::span<const char> bytes, std::string what) : bytes_(bytes), what_(std::move(what)) {}
  std::uint32_t u32();
  std::uint64_t u64();
  float f32();
  double f64();
  std::string raw(std::size_t n);
  std::vector<double> f64s(std::size_t n);
  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n);
  std::span<const char> bytes_;
  std::string what_;
  std::size_t pos_ = 0;
};

}  // namespace podd
