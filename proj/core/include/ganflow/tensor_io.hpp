#pragma once

#include <filesystem>
#include <vector>

#include <Eigen/Dense>

namespace ganflow {

/// Contents of a GFTENSOR file. `data` holds the row-major payload as
/// shape[0] x (product of the remaining dims); rank-1 tensors load as 1 x n.
struct TensorFile {
  std::vector<Eigen::Index> shape;
  Eigen::MatrixXd data;
};

/// "GFTENSOR v1 f64 <rank> <d0> <d1> ...\n" followed by row-major
/// little-endian f64. A matrix is written with rank 2.
void write_gftensor(const std::filesystem::path& path, const Eigen::MatrixXd& m);
void write_gftensor(const std::filesystem::path& path, const Eigen::MatrixXd& m,
                    const std::vector<Eigen::Index>& shape);
TensorFile read_gftensor(const std::filesystem::path& path);

/// ASCII PGM (P2), 8-bit grey levels. Values are mapped linearly from
/// [lo, hi] to [0, 255] and clamped; the mapping is recorded as a comment
/// line "# ganflow-normalization min=<lo> max=<hi>" directly after the magic.
void write_pgm(const std::filesystem::path& path, const Eigen::MatrixXd& image, double lo, double hi);
/// Same, using the image's own min/max.
void write_pgm(const std::filesystem::path& path, const Eigen::MatrixXd& image);

/// Flattened image (1 x n*n row-major) to n x n and back.
Eigen::MatrixXd as_image(const Eigen::MatrixXd& flat_row, Eigen::Index n);
Eigen::MatrixXd as_row(const Eigen::MatrixXd& image);

}  // namespace ganflow
