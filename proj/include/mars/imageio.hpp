#pragma once

#include <string>
#include <utility>
#include <vector>

#include "mars/numerics.hpp"

namespace mars::feat {

inline constexpr int kImageSide = 128;

// Decodes a raster file, resizes to 128x128 and scales to [0,1].
// Returned tensor is {3,128,128}.
num::Tensor load_image(const std::string& path);

// Manifest CSV: token_id,filename (relative to image_dir).
std::vector<std::pair<std::string, num::Tensor>> load_images(
    const std::string& manifest_path, const std::string& image_dir);

bool image_support_available();

}  // namespace mars::feat
