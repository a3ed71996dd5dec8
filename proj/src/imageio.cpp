#include "mars/imageio.hpp"

#include <filesystem>

#include "mars/csv.hpp"
#include "mars/errors.hpp"

#ifdef MARS_HAVE_OPENCV
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>
#endif

namespace mars::feat {

bool image_support_available() {
#ifdef MARS_HAVE_OPENCV
  return true;
#else
  return false;
#endif
}

#ifdef MARS_HAVE_OPENCV

num::Tensor load_image(const std::string& path) {
  cv::Mat raw = cv::imread(path, cv::IMREAD_COLOR);
  if (raw.empty()) throw IoError("cannot decode image " + path);
  cv::Mat resized;
  cv::resize(raw, resized, cv::Size(kImageSide, kImageSide), 0, 0,
             cv::INTER_AREA);
  std::vector<double> values(3ull * kImageSide * kImageSide);
  for (int y = 0; y < kImageSide; ++y) {
    const auto* row = resized.ptr<cv::Vec3b>(y);
    for (int x = 0; x < kImageSide; ++x) {
      for (int c = 0; c < 3; ++c) {
        values[(static_cast<std::size_t>(c) * kImageSide + y) * kImageSide + x] =
            static_cast<double>(row[x][2 - c]) / 255.0;  // BGR -> RGB
      }
    }
  }
  return num::Tensor::from_values({3, kImageSide, kImageSide},
                                  std::move(values));
}

#else

num::Tensor load_image(const std::string&) {
  throw IoError("image decoding unavailable: built without OpenCV");
}

#endif

std::vector<std::pair<std::string, num::Tensor>> load_images(
    const std::string& manifest_path, const std::string& image_dir) {
  const auto table = csv::read_file(manifest_path);
  const int tok = table.column("token_id");
  const int file = table.column("filename");
  if (tok < 0 || file < 0) {
    throw DataError("image manifest: expected columns token_id,filename in " +
                    manifest_path);
  }
  std::vector<std::pair<std::string, num::Tensor>> out;
  out.reserve(table.rows.size());
  for (const auto& row : table.rows) {
    const auto path = std::filesystem::path(image_dir) / row[file];
    out.emplace_back(row[tok], load_image(path.string()));
  }
  return out;
}

}  // namespace mars::feat
