#include "skd/rng.hpp"

#include <cmath>
#include <numeric>

namespace skd {

std::uint64_t Rng::below(std::uint64_t n) {
  if (n <= 1) return 0;
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t x;
  do {
    x = engine_();
  } while (x >= limit);
  return x % n;
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1;
  do {
    u1 = uniform();
  } while (u1 <= 0.0);
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * M_PI * u2;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

std::vector<std::size_t> Rng::permutation(std::size_t n) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), std::size_t{0});
  for (std::size_t i = n; i > 1; --i) {
    auto j = static_cast<std::size_t>(below(i));
    std::swap(p[i - 1], p[j]);
  }
  return p;
}

std::vector<double> Rng::simplex(std::size_t n) {
  // Normalized unit exponentials are Dirichlet(1, ..., 1).
  std::vector<double> w(n);
  double total = 0.0;
  for (auto& x : w) {
    double u;
    do {
      u = uniform();
    } while (u <= 0.0);
    x = -std::log(u);
    total += x;
  }
  for (auto& x : w) x /= total;
  return w;
}

}  // namespace skd
