#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <iterator>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <gtest/gtest.h>

#include "fame/error.hpp"
#include "fame/gmm.hpp"
#include "fame/types.hpp"

namespace fame::test {

inline Vector vec(std::initializer_list<double> values) {
  Vector v(static_cast<Eigen::Index>(values.size()));
  Eigen::Index i = 0;
  for (double x : values) v[i++] = x;
  return v;
}

inline GmmComponent gaussian1d(double mean, double var, double weight = 1.0, double tag = 0.0) {
  return {vec({mean}), Matrix::Constant(1, 1, var), weight, tag};
}

inline GmmSpec single_gaussian_1d(double mean, double var) {
  return GmmSpec({{0, 1.0, {gaussian1d(mean, var)}}});
}

// Random SPD matrix with eigenvalues in [lo, hi].
inline Matrix random_spd(std::mt19937_64& gen, int d, double lo, double hi) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix a(d, d);
  for (int i = 0; i < d; ++i) {
    for (int j = 0; j < d; ++j) a(i, j) = n(gen);
  }
  Eigen::HouseholderQR<Matrix> qr(a);
  const Matrix q = qr.householderQ();
  Vector ev(d);
  for (int i = 0; i < d; ++i) ev[i] = u(gen);
  return q * ev.asDiagonal() * q.transpose();
}

inline Vector random_vector(std::mt19937_64& gen, int d, double scale) {
  std::normal_distribution<double> n(0.0, scale);
  Vector v(d);
  for (int i = 0; i < d; ++i) v[i] = n(gen);
  return v;
}

// Random mixture: `classes` classes of `components` components each.
inline GmmSpec random_mixture(std::mt19937_64& gen, int d, int classes, int components) {
  std::uniform_real_distribution<double> u(0.2, 1.0);
  std::vector<GmmClass> out;
  for (int c = 0; c < classes; ++c) {
    GmmClass cls{c, u(gen), {}};
    double total = 0.0;
    for (int k = 0; k < components; ++k) {
      const double w = u(gen);
      total += w;
      cls.components.push_back({random_vector(gen, d, 1.5), random_spd(gen, d, 0.1, 1.0), w, 1.0 + 2.0 * u(gen)});
    }
    for (auto& comp : cls.components) comp.weight /= total;
    out.push_back(std::move(cls));
  }
  double prior_total = 0.0;
  for (const auto& c : out) prior_total += c.prior;
  for (auto& c : out) c.prior /= prior_total;
  return GmmSpec(std::move(out));
}

class TempDir {
 public:
  TempDir() {
    static std::mt19937_64 gen(std::random_device{}());
    path_ = std::filesystem::temp_directory_path() / ("fame-test-" + std::to_string(gen()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline std::string read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_bytes(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

template <class F>
ErrorKind error_kind_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "expected a fame::Error";
  return ErrorKind::io_error;
}

}  // namespace fame::test
