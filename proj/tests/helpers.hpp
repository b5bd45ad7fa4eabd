#pragma once

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "deeptruck/cyclegen.hpp"
#include "deeptruck/deepmodel.hpp"
#include "deeptruck/plant.hpp"
#include "deeptruck/rng.hpp"

namespace dt_test {

using namespace deeptruck;

/// Fresh scratch directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() /
            ("deeptruck_" + tag + "_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) + "_" +
             std::to_string(reinterpret_cast<std::uintptr_t>(this)));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

/// Small randomly initialized model with identity normalization.
inline DeepModelParams tiny_model(Index hidden, std::vector<Index> decoder, Index w_dim, std::uint64_t seed,
                                  double dt = 0.1) {
  DeepModelParams p(IoSpec::identity(w_dim, dt), ModelArch{hidden, std::move(decoder)});
  Rng rng(seed);
  p.initialize(rng);
  return p;
}

/// Episode with random but smooth inputs and outputs consistent with v(k+1) = v(k) + a(k+1) dt.
inline Episode synthetic_episode(std::size_t n, std::uint64_t seed, bool grade = true, double dt = 0.1) {
  Rng rng(seed);
  Episode ep;
  ep.dt = dt;
  double v = uniform(rng, 5.0, 20.0);
  for (std::size_t k = 0; k < n; ++k) {
    const double a = k == 0 ? 0.0 : 0.5 * std::sin(0.05 * static_cast<double>(k)) + normal(rng, 0.0, 0.1);
    if (k > 0) v += a * dt;
    ep.push(static_cast<double>(k) * dt, uniform(rng, 0.0, 60.0), uniform(rng, 0.0, 20.0),
            grade ? uniform(rng, -2.0, 2.0) : 0.0, v, a, 0.6 + uniform(rng, 0.0, 5.0));
  }
  if (!grade) ep.grade.clear();
  return ep;
}

/// Two-pass population mean and standard deviation.
inline std::pair<double, double> two_pass(const std::vector<double>& x) {
  double m = 0.0;
  for (double v : x) m += v;
  m /= static_cast<double>(x.size());
  double s = 0.0;
  for (double v : x) s += (v - m) * (v - m);
  return {m, std::sqrt(s / static_cast<double>(x.size()))};
}

}  // namespace dt_test
