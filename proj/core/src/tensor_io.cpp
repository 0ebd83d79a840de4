#include "ganflow/tensor_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "ganflow/errors.hpp"

namespace ganflow {

namespace {

std::vector<double> row_major(const Eigen::MatrixXd& m) {
  std::vector<double> out(static_cast<std::size_t>(m.size()));
  std::size_t k = 0;
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) out[k++] = m(i, j);
  return out;
}

}  // namespace

void write_gftensor(const std::filesystem::path& path, const Eigen::MatrixXd& m) {
  write_gftensor(path, m, {m.rows(), m.cols()});
}

void write_gftensor(const std::filesystem::path& path, const Eigen::MatrixXd& m,
                    const std::vector<Eigen::Index>& shape) {
  const auto count = std::accumulate(shape.begin(), shape.end(), Eigen::Index{1}, std::multiplies<>());
  if (shape.empty() || count != m.size()) throw ShapeError("GFTENSOR shape does not match data size");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ValidationError("cannot open " + path.string() + " for writing");
  os << "GFTENSOR v1 f64 " << shape.size();
  for (auto d : shape) os << ' ' << d;
  os << '\n';
  const auto data = row_major(m);
  os.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(double)));
  if (!os) throw ValidationError("failed writing " + path.string());
}

TensorFile read_gftensor(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ValidationError("cannot open " + path.string());
  std::string header;
  std::getline(is, header);
  std::istringstream hs(header);
  std::string magic, version, dtype;
  std::size_t rank = 0;
  if (!(hs >> magic >> version >> dtype >> rank) || magic != "GFTENSOR" || version != "v1" || dtype != "f64" ||
      rank == 0)
    throw ValidationError(path.string() + ": not a GFTENSOR v1 f64 file");
  TensorFile out;
  for (std::size_t i = 0; i < rank; ++i) {
    Eigen::Index d = 0;
    if (!(hs >> d) || d < 0) throw ValidationError(path.string() + ": bad dimension in header");
    out.shape.push_back(d);
  }
  const Eigen::Index rows = rank == 1 ? 1 : out.shape[0];
  Eigen::Index cols = 1;
  for (std::size_t i = rank == 1 ? 0 : 1; i < rank; ++i) cols *= out.shape[i];
  std::vector<double> data(static_cast<std::size_t>(rows * cols));
  is.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(double)));
  if (static_cast<std::size_t>(is.gcount()) != data.size() * sizeof(double))
    throw ValidationError(path.string() + ": truncated payload");
  out.data.resize(rows, cols);
  std::size_t k = 0;
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) out.data(i, j) = data[k++];
  return out;
}

void write_pgm(const std::filesystem::path& path, const Eigen::MatrixXd& image, double lo, double hi) {
  std::ofstream os(path);
  if (!os) throw ValidationError("cannot open " + path.string() + " for writing");
  os << "P2\n# ganflow-normalization min=" << lo << " max=" << hi << '\n';
  os << image.cols() << ' ' << image.rows() << "\n255\n";
  const double span = hi > lo ? hi - lo : 1.0;
  for (Eigen::Index i = 0; i < image.rows(); ++i) {
    for (Eigen::Index j = 0; j < image.cols(); ++j) {
      const double t = std::clamp((image(i, j) - lo) / span, 0.0, 1.0);
      os << static_cast<int>(std::lround(255.0 * t)) << (j + 1 == image.cols() ? '\n' : ' ');
    }
  }
}

void write_pgm(const std::filesystem::path& path, const Eigen::MatrixXd& image) {
  write_pgm(path, image, image.minCoeff(), image.maxCoeff());
}

Eigen::MatrixXd as_image(const Eigen::MatrixXd& flat_row, Eigen::Index n) {
  if (flat_row.size() != n * n) throw ShapeError("as_image: size is not n*n");
  Eigen::MatrixXd img(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) img(i, j) = flat_row(0, i * n + j);
  return img;
}

Eigen::MatrixXd as_row(const Eigen::MatrixXd& image) {
  Eigen::MatrixXd row(1, image.size());
  for (Eigen::Index i = 0; i < image.rows(); ++i)
    for (Eigen::Index j = 0; j < image.cols(); ++j) row(0, i * image.cols() + j) = image(i, j);
  return row;
}

}  // namespace ganflow
