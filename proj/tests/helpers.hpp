#pragma once

// Independent straight-line oracles shared by the unit tests.

#include "das2/nets.hpp"

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

namespace testing {

using das2::Index;
using das2::Matrix;
using das2::Vector;

/// Dense tanh network evaluated with scalar loops from a flat parameter
/// vector laid out as W_1 (out x in, row-major), b_1, W_2, b_2, ...; `offset`
/// is advanced past the network.
inline std::vector<double> hand_mlp(const std::vector<Index>& sizes, const Vector& params, std::size_t& offset,
                                    std::vector<double> h) {
  for (std::size_t layer = 0; layer + 1 < sizes.size(); ++layer) {
    const Index in = sizes[layer];
    const Index out = sizes[layer + 1];
    const std::size_t w = offset;
    const std::size_t b = w + static_cast<std::size_t>(in * out);
    offset = b + static_cast<std::size_t>(out);
    std::vector<double> next(static_cast<std::size_t>(out));
    for (Index o = 0; o < out; ++o) {
      double acc = params[static_cast<Index>(b) + o];
      for (Index i = 0; i < in; ++i) acc += params[static_cast<Index>(w) + o * in + i] * h[static_cast<std::size_t>(i)];
      next[static_cast<std::size_t>(o)] = layer + 2 < sizes.size() ? std::tanh(acc) : acc;
    }
    h = std::move(next);
  }
  return h;
}

inline double hand_mlp_scalar(const std::vector<Index>& sizes, const Vector& params, std::vector<double> input) {
  std::size_t offset = 0;
  return hand_mlp(sizes, params, offset, std::move(input))[0];
}

/// Fresh empty directory under the system temp path.
inline std::filesystem::path temp_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("das2_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline double max_abs(const Matrix& m) { return m.size() ? m.cwiseAbs().maxCoeff() : 0.0; }

}  // namespace testing
