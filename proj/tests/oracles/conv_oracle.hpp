#pragma once

// Naive cross-correlation over NCDHW, double accumulation, one output voxel
// at a time.

#include <cstdint>
#include <vector>

namespace vxf::oracle {

struct ConvCase {
  int n = 1, cin = 1, cout = 1, k = 3, stride = 1, pad = 1;
  int d = 5, h = 5, w = 5;

  int out(int e) const { return (e + 2 * pad - k) / stride + 1; }
};

template <class Real>
std::vector<double> naive_conv3d(const ConvCase& c, const std::vector<Real>& x, const std::vector<Real>& w,
                                 const std::vector<Real>& b) {
  const int od = c.out(c.d), oh = c.out(c.h), ow = c.out(c.w);
  std::vector<double> y(static_cast<std::size_t>(c.n) * c.cout * od * oh * ow);
  std::size_t o = 0;
  for (int n = 0; n < c.n; ++n)
    for (int co = 0; co < c.cout; ++co)
      for (int z = 0; z < od; ++z)
        for (int r = 0; r < oh; ++r)
          for (int q = 0; q < ow; ++q, ++o) {
            double acc = b.empty() ? 0.0 : static_cast<double>(b[co]);
            for (int ci = 0; ci < c.cin; ++ci)
              for (int kd = 0; kd < c.k; ++kd)
                for (int kh = 0; kh < c.k; ++kh)
                  for (int kw = 0; kw < c.k; ++kw) {
                    const int iz = z * c.stride - c.pad + kd;
                    const int ir = r * c.stride - c.pad + kh;
                    const int iq = q * c.stride - c.pad + kw;
                    if (iz < 0 || ir < 0 || iq < 0 || iz >= c.d || ir >= c.h || iq >= c.w) continue;
                    const double xv = x[((static_cast<std::size_t>(n) * c.cin + ci) * c.d + iz) * c.h * c.w +
                                        static_cast<std::size_t>(ir) * c.w + iq];
                    const double wv = w[((static_cast<std::size_t>(co) * c.cin + ci) * c.k + kd) * c.k * c.k +
                                        static_cast<std::size_t>(kh) * c.k + kw];
                    acc += xv * wv;
                  }
            y[o] = acc;
          }
  return y;
}

}  // namespace vxf::oracle
