#include "ganflow/param_vector.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "ganflow/errors.hpp"

namespace ganflow {

static_assert(std::endian::native == std::endian::little,
              "GFPARAMS/GFTENSOR payload I/O assumes a little-endian host");

void ParamVector::add(const std::string& name, const Eigen::MatrixXd& value) {
  if (name.empty() || name.find_first_of(" \t\n") != std::string::npos)
    throw ValidationError("segment name must be non-empty without whitespace: '" + name + "'");
  if (contains(name)) throw ValidationError("duplicate segment '" + name + "'");
  Segment seg{name, static_cast<std::size_t>(data_.size()), value.rows(), value.cols()};
  Eigen::VectorXd grown(data_.size() + static_cast<Eigen::Index>(seg.size()));
  grown.head(data_.size()) = data_;
  for (Eigen::Index i = 0; i < value.rows(); ++i)
    for (Eigen::Index j = 0; j < value.cols(); ++j)
      grown(static_cast<Eigen::Index>(seg.offset) + i * value.cols() + j) = value(i, j);
  data_ = std::move(grown);
  segments_.push_back(std::move(seg));
}

std::size_t ParamVector::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < segments_.size(); ++i)
    if (segments_[i].name == name) return i;
  throw ValidationError("no segment named '" + name + "'");
}

bool ParamVector::contains(const std::string& name) const {
  for (const auto& s : segments_)
    if (s.name == name) return true;
  return false;
}

const ParamVector::Segment& ParamVector::segment(const std::string& name) const {
  return segments_[index_of(name)];
}

void ParamVector::set(const std::string& name, const Eigen::MatrixXd& value) {
  const auto& seg = segment(name);
  if (value.rows() != seg.rows || value.cols() != seg.cols)
    throw ShapeError("segment '" + name + "' shape mismatch on set");
  for (Eigen::Index i = 0; i < seg.rows; ++i)
    for (Eigen::Index j = 0; j < seg.cols; ++j)
      data_(static_cast<Eigen::Index>(seg.offset) + i * seg.cols + j) = value(i, j);
}

Eigen::MatrixXd ParamVector::get(const std::string& name) const {
  const auto& seg = segment(name);
  Eigen::MatrixXd out(seg.rows, seg.cols);
  for (Eigen::Index i = 0; i < seg.rows; ++i)
    for (Eigen::Index j = 0; j < seg.cols; ++j)
      out(i, j) = data_(static_cast<Eigen::Index>(seg.offset) + i * seg.cols + j);
  return out;
}

ParamVector ParamVector::zeros_like() const {
  ParamVector out = *this;
  out.data_.setZero();
  return out;
}

ParamVector ParamVector::subset(const std::string& prefix) const {
  ParamVector out;
  for (const auto& s : segments_)
    if (s.name.rfind(prefix, 0) == 0) out.add(s.name, get(s.name));
  return out;
}

void ParamVector::assign_from(const ParamVector& other) {
  for (const auto& s : other.segments_) set(s.name, other.get(s.name));
}

void ParamVector::append(const ParamVector& other) {
  for (const auto& s : other.segments_) add(s.name, other.get(s.name));
}

std::vector<std::string> ParamVector::names() const {
  std::vector<std::string> out;
  out.reserve(segments_.size());
  for (const auto& s : segments_) out.push_back(s.name);
  return out;
}

void ParamVector::write(std::ostream& os) const {
  os << "GFPARAMS v1\n";
  for (const auto& s : segments_) os << s.name << ' ' << s.offset << ' ' << s.rows << 'x' << s.cols << '\n';
  os << '\n';
  os.write(reinterpret_cast<const char*>(data_.data()),
           static_cast<std::streamsize>(data_.size() * sizeof(double)));
  if (!os) throw ValidationError("failed writing GFPARAMS payload");
}

ParamVector ParamVector::read(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != "GFPARAMS v1")
    throw ValidationError("not a GFPARAMS v1 stream");
  ParamVector out;
  std::size_t expected_offset = 0;
  while (std::getline(is, line) && !line.empty()) {
    std::istringstream ls(line);
    Segment seg;
    std::string shape;
    if (!(ls >> seg.name >> seg.offset >> shape)) throw ValidationError("bad segment line: " + line);
    const auto x = shape.find('x');
    if (x == std::string::npos) throw ValidationError("bad segment shape: " + shape);
    seg.rows = std::stol(shape.substr(0, x));
    seg.cols = std::stol(shape.substr(x + 1));
    if (seg.offset != expected_offset) throw ValidationError("segments are not contiguous at " + seg.name);
    expected_offset += seg.size();
    out.segments_.push_back(std::move(seg));
  }
  out.data_.resize(static_cast<Eigen::Index>(expected_offset));
  is.read(reinterpret_cast<char*>(out.data_.data()),
          static_cast<std::streamsize>(expected_offset * sizeof(double)));
  if (static_cast<std::size_t>(is.gcount()) != expected_offset * sizeof(double))
    throw ValidationError("truncated GFPARAMS payload");
  return out;
}

void ParamVector::save(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ValidationError("cannot open " + path.string() + " for writing");
  write(os);
}

ParamVector ParamVector::load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ValidationError("cannot open " + path.string());
  return read(is);
}

bool operator==(const ParamVector& a, const ParamVector& b) {
  if (a.segments_.size() != b.segments_.size() || a.data_.size() != b.data_.size()) return false;
  for (std::size_t i = 0; i < a.segments_.size(); ++i) {
    const auto& x = a.segments_[i];
    const auto& y = b.segments_[i];
    if (x.name != y.name || x.offset != y.offset || x.rows != y.rows || x.cols != y.cols) return false;
  }
  return std::memcmp(a.data_.data(), b.data_.data(),
                     static_cast<std::size_t>(a.data_.size()) * sizeof(double)) == 0;
}

}  // namespace ganflow
