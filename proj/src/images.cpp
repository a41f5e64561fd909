#include "mcnn/images.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cctype>
#include <cstring>
#include <fstream>

namespace mcnn {
namespace {

constexpr char kRawMagic[] = "MTTENS1";
constexpr std::size_t kRawMagicLen = sizeof(kRawMagic) - 1;

static_assert(std::endian::native == std::endian::little,
              "raw tensor and checkpoint I/O assume a little-endian host");

std::string ppm_token(std::istream& in) {
  std::string tok;
  int c = in.get();
  while (in) {
    if (c == '#') {
      while (in && c != '\n') c = in.get();
    } else if (std::isspace(c)) {
      if (!tok.empty()) return tok;
    } else {
      tok.push_back(static_cast<char>(c));
    }
    c = in.get();
  }
  return tok;
}

Index ppm_number(std::istream& in, const char* what) {
  const std::string tok = ppm_token(in);
  try {
    size_t used = 0;
    const long v = std::stol(tok, &used);
    if (used != tok.size() || v <= 0) throw DataError("");
    return v;
  } catch (const std::exception&) {
    throw DataError(std::string("PPM: bad ") + what + " '" + tok + "'");
  }
}

std::uint32_t read_u32(std::istream& in) {
  std::uint32_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) throw DataError("raw tensor: truncated header");
  return v;
}

void write_u32(std::ostream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return in;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  return out;
}

}  // namespace

Tensorf read_ppm(std::istream& in) {
  if (ppm_token(in) != "P6") throw DataError("PPM: expected P6 magic");
  const Index w = ppm_number(in, "width");
  const Index h = ppm_number(in, "height");
  const Index maxval = ppm_number(in, "maxval");
  if (maxval > 255) throw DataError("PPM: only 8-bit images are supported");
  std::vector<unsigned char> raw(static_cast<size_t>(3 * h * w));
  if (!in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size())))
    throw DataError("PPM: truncated pixel data");
  // Interleaved RGB to planar channels.
  Tensorf img({3, h, w});
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x)
      for (Index c = 0; c < 3; ++c) img[(c * h + y) * w + x] = raw[static_cast<size_t>((y * w + x) * 3 + c)];
  return img;
}

Tensorf read_ppm(const std::filesystem::path& path) {
  auto in = open_in(path);
  return read_ppm(in);
}

void write_ppm(std::ostream& out, const Tensorf& image) {
  if (image.rank() != 3 || image.dim(0) != 3)
    throw DimensionError("PPM needs a [3, H, W] image, got " + shape_string(image.shape()));
  const Index h = image.dim(1), w = image.dim(2);
  out << "P6\n" << w << ' ' << h << "\n255\n";
  std::vector<unsigned char> raw(static_cast<size_t>(3 * h * w));
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x)
      for (Index c = 0; c < 3; ++c) {
        const float v = std::clamp(std::round(image[(c * h + y) * w + x]), 0.0f, 255.0f);
        raw[static_cast<size_t>((y * w + x) * 3 + c)] = static_cast<unsigned char>(v);
      }
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
}

void write_ppm(const std::filesystem::path& path, const Tensorf& image) {
  auto out = open_out(path);
  write_ppm(out, image);
}

Tensorf read_raw_tensor(std::istream& in) {
  char magic[kRawMagicLen];
  if (!in.read(magic, kRawMagicLen) || std::memcmp(magic, kRawMagic, kRawMagicLen) != 0)
    throw DataError("raw tensor: bad magic");
  const std::uint32_t rank = read_u32(in);
  if (rank == 0 || rank > 8) throw DataError("raw tensor: bad rank " + std::to_string(rank));
  Shape shape;
  for (std::uint32_t i = 0; i < rank; ++i) {
    const std::uint32_t d = read_u32(in);
    if (d == 0) throw DataError("raw tensor: zero dimension");
    shape.push_back(d);
  }
  Tensorf t(shape);
  if (!in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * 4)))
    throw DataError("raw tensor: truncated data for shape " + shape_string(shape));
  return t;
}

Tensorf read_raw_tensor(const std::filesystem::path& path) {
  auto in = open_in(path);
  return read_raw_tensor(in);
}

void write_raw_tensor(std::ostream& out, const Tensorf& tensor) {
  out.write(kRawMagic, kRawMagicLen);
  write_u32(out, static_cast<std::uint32_t>(tensor.rank()));
  for (Index d : tensor.shape()) write_u32(out, static_cast<std::uint32_t>(d));
  out.write(reinterpret_cast<const char*>(tensor.data()), static_cast<std::streamsize>(tensor.size() * 4));
}

void write_raw_tensor(const std::filesystem::path& path, const Tensorf& tensor) {
  auto out = open_out(path);
  write_raw_tensor(out, tensor);
}

const char* file_extension(ImageFormat format) {
  return format == ImageFormat::Ppm ? ".ppm" : ".mtt";
}

Tensorf read_image(const std::filesystem::path& path, ImageFormat format) {
  Tensorf img = format == ImageFormat::Ppm ? read_ppm(path) : read_raw_tensor(path);
  if (img.rank() != 3) throw DataError(path.string() + ": expected a [C, H, W] image");
  return img;
}

void write_image(const std::filesystem::path& path, const Tensorf& image, ImageFormat format) {
  if (format == ImageFormat::Ppm) {
    write_ppm(path, image);
  } else {
    write_raw_tensor(path, image);
  }
}

}  // namespace mcnn
