#pragma once

#include <Eigen/Core>

#include <filesystem>

namespace tlm {

// One RGB frame. Channels are rows×cols matrices with values in [0, 1].
struct Frame {
  Eigen::MatrixXf r, g, b;

  Eigen::Index rows() const { return r.rows(); }
  Eigen::Index cols() const { return r.cols(); }

  static Frame zero(Eigen::Index rows, Eigen::Index cols) {
    return {Eigen::MatrixXf::Zero(rows, cols), Eigen::MatrixXf::Zero(rows, cols),
            Eigen::MatrixXf::Zero(rows, cols)};
  }
};

// Sum over pixels and channels of |a - b|. Shapes must match.
double frame_abs_diff(const Frame& a, const Frame& b);

// 8-bit RGB PNG I/O. Reading converts palette/gray/alpha files to RGB;
// writing quantizes each channel with round-to-nearest after clamping.
Frame read_png_rgb(const std::filesystem::path& path);
void write_png_rgb(const std::filesystem::path& path, const Frame& frame);

}  // namespace tlm
