#include "podd/io.hpp"

#include <png.h>

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

#include "podd/error.hpp"

namespace podd {

namespace {

constexpr std::string_view kPosterMagic{"PODDv1\0\0", 8};
constexpr std::string_view kLabelMagic{"PODLv1\0\0", 8};

static_assert(std::endian::native == std::endian::little, "artifact I/O assumes a little-endian host");

}  // namespace

void ByteWriter::u32(std::uint32_t v) { raw({reinterpret_cast<const char*>(&v), sizeof v}); }
void ByteWriter::u64(std::uint64_t v) { raw({reinterpret_cast<const char*>(&v), sizeof v}); }
void ByteWriter::f32(float v) { raw({reinterpret_cast<const char*>(&v), sizeof v}); }
void ByteWriter::f64(double v) { raw({reinterpret_cast<const char*>(&v), sizeof v}); }
void ByteWriter::raw(std::string_view s) { bytes_.insert(bytes_.end(), s.begin(), s.end()); }
void ByteWriter::f64s(std::span<const double> v) {
  raw({reinterpret_cast<const char*>(v.data()), v.size_bytes()});
}

void ByteReader::need(std::size_t n) {
  if (pos_ + n > bytes_.size()) {
    std::ostringstream msg;
    msg << what_ << " is truncated at byte offset " << pos_ << " (needed " << n << " more bytes)";
    throw RuntimeFailure(msg.str());
  }
}

std::uint32_t ByteReader::u32() {
  need(4);
  std::uint32_t v;
  std::memcpy(&v, bytes_.data() + pos_, 4);
  pos_ += 4;
  return v;
}

std::uint64_t ByteReader::u64() {
  need(8);
  std::uint64_t v;
  std::memcpy(&v, bytes_.data() + pos_, 8);
  pos_ += 8;
  return v;
}

float ByteReader::f32() {
  need(4);
  float v;
  std::memcpy(&v, bytes_.data() + pos_, 4);
  pos_ += 4;
  return v;
}

double ByteReader::f64() {
  need(8);
  double v;
  std::memcpy(&v, bytes_.data() + pos_, 8);
  pos_ += 8;
  return v;
}

std::string ByteReader::raw(std::size_t n) {
  need(n);
  std::string s(bytes_.data() + pos_, n);
  pos_ += n;
  return s;
}

std::vector<double> ByteReader::f64s(std::size_t n) {
  need(n * 8);
  std::vector<double> v(n);
  std::memcpy(v.data(), bytes_.data() + pos_, n * 8);
  pos_ += n * 8;
  return v;
}

void write_file_atomic(const std::filesystem::path& path, std::span<const char> bytes) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw RuntimeFailure("cannot open " + tmp.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw RuntimeFailure("failed writing " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw RuntimeFailure("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
  write_file_atomic(path, {text.data(), text.size()});
}

std::vector<char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw RuntimeFailure("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::vector<char> encode_poster(const Poster& poster) {
  ByteWriter w;
  w.raw(kPosterMagic);
  w.u32(static_cast<std::uint32_t>(poster.height));
  w.u32(static_cast<std::uint32_t>(poster.width));
  w.u32(static_cast<std::uint32_t>(poster.channels));
  for (double v : poster.pixels) w.f32(static_cast<float>(v));
  return w.bytes();
}

Poster decode_poster(std::span<const char> bytes) {
  ByteReader r(bytes, "poster file");
  if (r.raw(8) != kPosterMagic) throw RuntimeFailure("not a PODD1 poster file (bad magic)");
  const auto h = r.u32();
  const auto w = r.u32();
  const auto c = r.u32();
  if (h == 0 || w == 0 || c == 0) throw RuntimeFailure("poster file has a zero dimension");
  const std::size_t count = static_cast<std::size_t>(h) * w * c;
  if (r.remaining() != count * 4) {
    std::ostringstream msg;
    msg << "poster file payload is " << r.remaining() << " bytes at offset " << r.offset() << ", expected "
        << count * 4;
    throw RuntimeFailure(msg.str());
  }
  Poster p(static_cast<int>(h), static_cast<int>(w), static_cast<int>(c));
  for (double& v : p.pixels) v = r.f32();
  return p;
}

void save_poster(const std::filesystem::path& path, const Poster& poster) {
  const auto bytes = encode_poster(poster);
  write_file_atomic(path, bytes);
}

Poster load_poster(const std::filesystem::path& path) { return decode_poster(read_file(path)); }

std::vector<char> encode_labels(const LabelTensor& labels) {
  ByteWriter w;
  w.raw(kLabelMagic);
  w.u32(static_cast<std::uint32_t>(labels.shape.rows));
  w.u32(static_cast<std::uint32_t>(labels.shape.cols));
  w.u32(static_cast<std::uint32_t>(labels.n));
  for (double v : labels.values) w.f32(static_cast<float>(v));
  return w.bytes();
}

LabelTensor decode_labels(std::span<const char> bytes) {
  ByteReader r(bytes, "label file");
  if (r.raw(8) != kLabelMagic) throw RuntimeFailure("not a PODL1 label file (bad magic)");
  const auto rows = r.u32();
  const auto cols = r.u32();
  const auto n = r.u32();
  if (rows == 0 || cols == 0 || n == 0) throw RuntimeFailure("label file has a zero dimension");
  LabelTensor y({static_cast<int>(rows), static_cast<int>(cols)}, static_cast<int>(n));
  if (r.remaining() != y.values.size() * 4) {
    std::ostringstream msg;
    msg << "label file payload is " << r.remaining() << " bytes at offset " << r.offset() << ", expected "
        << y.values.size() * 4;
    throw RuntimeFailure(msg.str());
  }
  for (double& v : y.values) v = r.f32();
  return y;
}

void save_labels(const std::filesystem::path& path, const LabelTensor& labels) {
  const auto bytes = encode_labels(labels);
  write_file_atomic(path, bytes);
}

LabelTensor load_labels(const std::filesystem::path& path) { return decode_labels(read_file(path)); }

namespace {

}  // namespace

void write_png(const std::filesystem::path& path, int width, int height, int channels,
               std::span<const std::uint8_t> pixels) {
  if (channels != 1 && channels != 3) throw ConfigError("PNG export supports 1 or 3 channels");
  const std::size_t stride = static_cast<std::size_t>(width) * channels;
  if (pixels.size() != stride * height) throw ConfigError("PNG pixel buffer has the wrong size");

  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(width);
  img.height = static_cast<png_uint_32>(height);
  img.format = channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  png_alloc_size_t size = 0;
  const auto stride32 = static_cast<png_int_32>(stride);
  if (!png_image_write_to_memory(&img, nullptr, &size, 0, pixels.data(), stride32, nullptr)) {
    throw RuntimeFailure("PNG encoding failed for " + path.string() + ": " + img.message);
  }
  std::vector<char> out(size);
  if (!png_image_write_to_memory(&img, out.data(), &size, 0, pixels.data(), stride32, nullptr)) {
    throw RuntimeFailure("PNG encoding failed for " + path.string() + ": " + img.message);
  }
  out.resize(size);
  write_file_atomic(path, out);
}

void export_poster_png(const std::filesystem::path& path, const Poster& poster) {
  const int out_c = poster.channels == 3 ? 3 : 1;
  std::vector<std::uint8_t> px(static_cast<std::size_t>(poster.height) * poster.width * out_c);
  for (int ch = 0; ch < out_c; ++ch) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (int r = 0; r < poster.height; ++r)
      for (int c = 0; c < poster.width; ++c) {
        lo = std::min(lo, poster.at(r, c, ch));
        hi = std::max(hi, poster.at(r, c, ch));
      }
    const double scale = hi > lo ? 255.0 / (hi - lo) : 0.0;
    for (int r = 0; r < poster.height; ++r)
      for (int c = 0; c < poster.width; ++c) {
        const double v = (poster.at(r, c, ch) - lo) * scale;
        px[(static_cast<std::size_t>(r) * poster.width + c) * out_c + ch] =
            static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
      }
  }
  write_png(path, poster.width, poster.height, out_c, px);
}

std::string fnv1a_hex(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream s;
  s << std::hex;
  s.width(16);
  s.fill('0');
  s << h;
  return s.str();
}

}  // namespace podd
