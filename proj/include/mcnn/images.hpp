#pragma once

#include <filesystem>
#include <iosfwd>

#include "mcnn/tensor.hpp"

namespace mcnn {

// Images are float tensors of shape [3, H, W] holding 0..255 pixel values for
// PPM input, or arbitrary values for raw tensors.

enum class ImageFormat { Ppm, RawTensor };

/// Binary PPM (P6) with maxval <= 255.
Tensorf read_ppm(std::istream& in);
Tensorf read_ppm(const std::filesystem::path& path);
// Values are rounded and clamped to 0..255.
void write_ppm(std::ostream& out, const Tensorf& image);
void write_ppm(const std::filesystem::path& path, const Tensorf& image);

/// "MTTENS1", u32 rank, u32 dims, little-endian float32 values, row-major.
Tensorf read_raw_tensor(std::istream& in);
Tensorf read_raw_tensor(const std::filesystem::path& path);
void write_raw_tensor(std::ostream& out, const Tensorf& tensor);
void write_raw_tensor(const std::filesystem::path& path, const Tensorf& tensor);

const char* file_extension(ImageFormat format);  // ".ppm" or ".mtt"
Tensorf read_image(const std::filesystem::path& path, ImageFormat format);
void write_image(const std::filesystem::path& path, const Tensorf& image, ImageFormat format);

}  // namespace mcnn
