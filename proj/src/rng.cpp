#include "difrank/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace difrank {

double Rng::normal() {
  const double u1 = uniform01();
  const double u2 = uniform01();
  return std::sqrt(-2.0 * std::log(1.0 - u1)) *
         std::cos(2.0 * std::numbers::pi * u2);
}

std::size_t Rng::below(std::size_t n) {
  return std::min(n - 1, static_cast<std::size_t>(uniform01() *
                                                  static_cast<double>(n)));
}

}  // namespace difrank
