#pragma once

// Decoders for the accepted sample formats. PNG and JPEG arrive as
// [H,W,3] float tensors with pixel values in [0,255]; grayscale sources
// are channel-replicated. Implemented in src/image_io.cpp on libpng/libjpeg.

#include <string>

#include "pattlite/tensor.hpp"

namespace pattlite {

Tensorf decode_png(const std::string& path);
Tensorf decode_jpeg(const std::string& path);

// Dispatches on extension: .png, .jpg/.jpeg, or .plt raw tensors.
Tensorf load_image(const std::string& path);

}  // namespace pattlite
