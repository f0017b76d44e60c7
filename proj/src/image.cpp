#include "mtlvc/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "mtlvc/error.hpp"

namespace mtlvc::image {

namespace {

unsigned char Grey(double v) {
  return static_cast<unsigned char>(std::lround(255.0 * std::clamp(v, 0.0, 1.0)));
}

std::ofstream Open(const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error(ErrorCode::kIo, "cannot write image " + path.string());
  return os;
}

}  // namespace

void WriteSpectrogramPgm(const Matrix& features, const std::filesystem::path& path) {
  WriteSpectrogramStackPgm({features}, path);
}

void WriteSpectrogramStackPgm(const std::vector<Matrix>& rows, const std::filesystem::path& path) {
  if (rows.empty()) throw Error(ErrorCode::kEmptyInput, "nothing to draw");
  Eigen::Index width = 1;
  Eigen::Index height = static_cast<Eigen::Index>(rows.size()) - 1;
  for (const auto& m : rows) {
    width = std::max(width, m.rows());
    height += m.cols();
  }
  std::vector<unsigned char> px(static_cast<std::size_t>(width * height), 0);
  Eigen::Index top = 0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const Matrix& m = rows[i];
    for (Eigen::Index f = 0; f < m.cols(); ++f) {
      const Eigen::Index y = top + (m.cols() - 1 - f);
      for (Eigen::Index t = 0; t < m.rows(); ++t) px[static_cast<std::size_t>(y * width + t)] = Grey(m(t, f));
    }
    top += m.cols();
    if (i + 1 < rows.size()) {
      std::fill_n(px.begin() + top * width, width, 255);
      ++top;
    }
  }
  auto os = Open(path);
  os << "P5\n" << width << ' ' << height << "\n255\n";
  os.write(reinterpret_cast<const char*>(px.data()), static_cast<std::streamsize>(px.size()));
  if (!os) throw Error(ErrorCode::kIo, "write failed for " + path.string());
}

void WriteHeatmapPpm(const Matrix& values, double lo, double hi, int cell, const std::filesystem::path& path) {
  if (values.size() == 0 || cell <= 0 || !(hi > lo)) throw Error(ErrorCode::kInvalidArgument, "bad heatmap");
  const Eigen::Index w = values.cols() * cell;
  const Eigen::Index h = values.rows() * cell;
  auto os = Open(path);
  os << "P6\n" << w << ' ' << h << "\n255\n";
  for (Eigen::Index y = 0; y < h; ++y) {
    for (Eigen::Index x = 0; x < w; ++x) {
      const double t = std::clamp((values(y / cell, x / cell) - lo) / (hi - lo), 0.0, 1.0);
      const unsigned char rgb[3] = {Grey(t), Grey(1.0 - std::abs(2.0 * t - 1.0)), Grey(1.0 - t)};
      os.write(reinterpret_cast<const char*>(rgb), 3);
    }
  }
  if (!os) throw Error(ErrorCode::kIo, "write failed for " + path.string());
}

}  // namespace mtlvc::image
