#include "tlm/png_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "tlm/common.hpp"

namespace tlm {

double frame_abs_diff(const Frame& a, const Frame& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "frame_abs_diff: shape mismatch");
  return double((a.r - b.r).cwiseAbs().sum()) + double((a.g - b.g).cwiseAbs().sum()) +
         double((a.b - b.b).cwiseAbs().sum());
}

Frame read_png_rgb(const std::filesystem::path& path) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.string().c_str()))
    fail("png read failed: " + path.string() + ": " + image.message);
  image.format = PNG_FORMAT_RGB;
  std::vector<unsigned char> buf(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buf.data(), 0, nullptr))
    fail("png read failed: " + path.string() + ": " + image.message);

  const Eigen::Index rows = image.height, cols = image.width;
  Frame f = Frame::zero(rows, cols);
  for (Eigen::Index y = 0; y < rows; ++y)
    for (Eigen::Index x = 0; x < cols; ++x) {
      const unsigned char* px = buf.data() + 3 * (y * cols + x);
      f.r(y, x) = float(px[0]) / 255.0f;
      f.g(y, x) = float(px[1]) / 255.0f;
      f.b(y, x) = float(px[2]) / 255.0f;
    }
  return f;
}

namespace {

unsigned char quantize(float v) {
  const float c = std::clamp(v, 0.0f, 1.0f);
  return static_cast<unsigned char>(std::lround(c * 255.0f));
}

}  // namespace

void write_png_rgb(const std::filesystem::path& path, const Frame& frame) {
  require(frame.rows() > 0 && frame.cols() > 0, "png write: empty frame");
  require(frame.g.rows() == frame.rows() && frame.g.cols() == frame.cols() &&
              frame.b.rows() == frame.rows() && frame.b.cols() == frame.cols(),
          "png write: channel shape mismatch");
  const Eigen::Index rows = frame.rows(), cols = frame.cols();
  std::vector<unsigned char> buf(std::size_t(3) * rows * cols);
  for (Eigen::Index y = 0; y < rows; ++y)
    for (Eigen::Index x = 0; x < cols; ++x) {
      unsigned char* px = buf.data() + 3 * (y * cols + x);
      px[0] = quantize(frame.r(y, x));
      px[1] = quantize(frame.g(y, x));
      px[2] = quantize(frame.b(y, x));
    }

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = png_uint_32(cols);
  image.height = png_uint_32(rows);
  image.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&image, path.string().c_str(), 0, buf.data(), 0, nullptr))
    fail("png write failed: " + path.string() + ": " + image.message);
}

}  // namespace tlm
