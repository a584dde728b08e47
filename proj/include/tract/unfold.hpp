#pragma once

#include <string>
#include <vector>

#include "tract/mat.hpp"

namespace tract {

// Image batch in batch-channel-row-column order, values are plain doubles
// (standardization happens upstream).
struct ImageBatch {
  int b = 0, c = 0, h = 0, w = 0;
  std::vector<double> data;

  ImageBatch() = default;
  ImageBatch(int b_, int c_, int h_, int w_) : b(b_), c(c_), h(h_), w(w_) {
    if (b < 1 || c < 1 || h < 1 || w < 1) {
      throw ContractError("ImageBatch: all dims must be >= 1");
    }
    data.assign(static_cast<size_t>(b) * c * h * w, 0.0);
  }

  double at(int bi, int ci, int y, int x) const {
    return data[((static_cast<size_t>(bi) * c + ci) * h + y) * w + x];
  }
  double& at(int bi, int ci, int y, int x) {
    return data[((static_cast<size_t>(bi) * c + ci) * h + y) * w + x];
  }
};

struct ConvGeom {
  int kh = 1, kw = 1;  // kernel
  int sh = 1, sw = 1;  // stride
  int ph = 0, pw = 0;  // zero padding
};

namespace detail {
inline int out_dim(int in, int k, int s, int p, const char* axis) {
  const int span = in + 2 * p - k;
  if (span < 0 || span % s != 0) {
    throw GeometryError(std::string("unfold: output ") + axis +
                        " not integral: (" + std::to_string(in) + " + 2*" +
                        std::to_string(p) + " - " + std::to_string(k) + ") / " +
                        std::to_string(s));
  }
  return span / s + 1;
}

inline void validate_geom(const ConvGeom& g) {
  if (g.kh < 1 || g.kw < 1) throw GeometryError("unfold: kernel dims must be >= 1");
  if (g.sh < 1 || g.sw < 1) throw GeometryError("unfold: strides must be >= 1");
  if (g.ph < 0 || g.pw < 0) throw GeometryError("unfold: padding must be >= 0");
}
}  // namespace detail

// Unfolded input: one column per receptive field. n = c*kh*kw rows,
// B = b*oh*ow columns (columns ordered batch-major, then output row, then
// output column). B is the effective batch that divides the gram matrix.
struct PatchMatrix {
  int n = 0;
  int B = 0;
  Mat data;  // n x B
  ConvGeom geom;
  int src_b = 0, src_c = 0, src_h = 0, src_w = 0;
  int out_h = 0, out_w = 0;
};

// im2col: matmul(W_flat, im2col(img).data) equals direct convolution with
// W_flat rows ordered (channel, kernel row, kernel col). Padding contributes
// exact zeros.
inline PatchMatrix im2col(const ImageBatch& img, const ConvGeom& g) {
  detail::validate_geom(g);
  const int oh = detail::out_dim(img.h, g.kh, g.sh, g.ph, "height");
  const int ow = detail::out_dim(img.w, g.kw, g.sw, g.pw, "width");

  PatchMatrix pm;
  pm.n = img.c * g.kh * g.kw;
  pm.B = img.b * oh * ow;
  pm.data = Mat(pm.n, pm.B);
  pm.geom = g;
  pm.src_b = img.b;
  pm.src_c = img.c;
  pm.src_h = img.h;
  pm.src_w = img.w;
  pm.out_h = oh;
  pm.out_w = ow;

  for (int bi = 0; bi < img.b; ++bi) {
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        const int col = (bi * oh + oy) * ow + ox;
        for (int ci = 0; ci < img.c; ++ci) {
          for (int ky = 0; ky < g.kh; ++ky) {
            const int y = oy * g.sh - g.ph + ky;
            for (int kx = 0; kx < g.kw; ++kx) {
              const int x = ox * g.sw - g.pw + kx;
              const int r = (ci * g.kh + ky) * g.kw + kx;
              const bool inside = y >= 0 && y < img.h && x >= 0 && x < img.w;
              pm.data(r, col) = inside ? img.at(bi, ci, y, x) : 0.0;
            }
          }
        }
      }
    }
  }
  return pm;
}

// Non-overlapping square patches (transformer-style embedding input).
inline PatchMatrix patchify(const ImageBatch& img, int patch) {
  if (patch < 1) throw GeometryError("patchify: patch size must be >= 1");
  if (img.h % patch != 0 || img.w % patch != 0) {
    throw GeometryError("patchify: image " + std::to_string(img.h) + "x" +
                        std::to_string(img.w) + " not divisible by patch " +
                        std::to_string(patch));
  }
  ConvGeom g;
  g.kh = g.kw = patch;
  g.sh = g.sw = patch;
  return im2col(img, g);
}

// One column per example, pixels flattened channel-major.
inline PatchMatrix flatten_dense(const ImageBatch& img) {
  PatchMatrix pm;
  pm.n = img.c * img.h * img.w;
  pm.B = img.b;
  pm.data = Mat(pm.n, pm.B);
  pm.src_b = img.b;
  pm.src_c = img.c;
  pm.src_h = img.h;
  pm.src_w = img.w;
  pm.out_h = 1;
  pm.out_w = 1;
  const size_t stride = static_cast<size_t>(pm.n);
  for (int bi = 0; bi < img.b; ++bi) {
    for (int r = 0; r < pm.n; ++r) {
      pm.data(r, bi) = img.data[bi * stride + r];
    }
  }
  return pm;
}

}  // namespace tract
