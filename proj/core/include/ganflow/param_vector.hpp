#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace ganflow {

/// Flat f64 vector with a table of named, disjoint segments covering it
/// exactly. Segments are appended in order; their offsets never change.
class ParamVector {
 public:
  struct Segment {
    std::string name;
    std::size_t offset = 0;
    Eigen::Index rows = 0;
    Eigen::Index cols = 0;
    [[nodiscard]] std::size_t size() const { return static_cast<std::size_t>(rows * cols); }
  };

  ParamVector() = default;

  /// Appends a segment; the tensor is stored row-major.
  void add(const std::string& name, const Eigen::MatrixXd& value);
  void set(const std::string& name, const Eigen::MatrixXd& value);
  [[nodiscard]] Eigen::MatrixXd get(const std::string& name) const;

  [[nodiscard]] bool contains(const std::string& name) const;
  [[nodiscard]] const Segment& segment(const std::string& name) const;
  [[nodiscard]] std::span<const Segment> segments() const { return segments_; }

  [[nodiscard]] std::size_t size() const { return static_cast<std::size_t>(data_.size()); }
  [[nodiscard]] const Eigen::VectorXd& flat() const { return data_; }
  [[nodiscard]] Eigen::VectorXd& flat() { return data_; }

  /// Same segment table, all zeros.
  [[nodiscard]] ParamVector zeros_like() const;
  /// Segments whose names start with `prefix`, in order.
  [[nodiscard]] ParamVector subset(const std::string& prefix) const;
  /// Copies every segment of `other` into the segment of the same name.
  void assign_from(const ParamVector& other);
  /// Appends every segment of `other` (names must not collide).
  void append(const ParamVector& other);

  [[nodiscard]] std::vector<std::string> names() const;

  /// "GFPARAMS v1\n", one "name offset RxC" line per segment, an empty line,
  /// then the payload as little-endian f64.
  void write(std::ostream& os) const;
  static ParamVector read(std::istream& is);
  void save(const std::filesystem::path& path) const;
  static ParamVector load(const std::filesystem::path& path);

  friend bool operator==(const ParamVector& a, const ParamVector& b);

 private:
  [[nodiscard]] std::size_t index_of(const std::string& name) const;

  Eigen::VectorXd data_;
  std::vector<Segment> segments_;
};

}  // namespace ganflow
