#pragma once

#include "tract/mat.hpp"
#include "tract/rng.hpp"
#include "tract/unfold.hpp"

namespace testutil {

inline tract::Mat random_mat(tract::Rng& rng, int rows, int cols,
                             double scale = 1.0) {
  tract::Mat m(rows, cols);
  for (double& v : m.data) v = scale * rng.normal();
  return m;
}

// SPD via A A^T + d I
inline tract::Mat random_spd(tract::Rng& rng, int n, double ridge = 0.5) {
  tract::Mat a = random_mat(rng, n, n);
  tract::Mat s = tract::matmul_bt(a, a);
  for (int i = 0; i < n; ++i) s(i, i) += ridge;
  return s;
}

inline tract::ImageBatch random_image_batch(tract::Rng& rng, int b, int c,
                                            int h, int w, double scale = 1.0) {
  tract::ImageBatch img(b, c, h, w);
  for (double& v : img.data) v = scale * rng.normal();
  return img;
}

}  // namespace testutil
