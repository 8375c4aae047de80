#include "musicnet/nn.hpp"

#include <algorithm>
#include <cstring>
#include <limits>

#include <Eigen/Core>

namespace musicnet::nn {

namespace {

template <typename T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapR = Eigen::Map<MatR<T>>;
template <typename T>
using CMapR = Eigen::Map<const MatR<T>>;

// im2col block size in output positions; keeps the column buffer cache-sized.
constexpr std::size_t kBlockPositions = 1024;

void require(bool ok, const std::string& what) {
  if (!ok) throw ContractViolation(what);
}

template <typename T>
void check_finite([[maybe_unused]] const BasicTensor<T>& t, [[maybe_unused]] const char* op) {
#ifndef NDEBUG
  if (!t.all_finite()) throw ContractViolation(std::string(op) + ": non-finite output");
#endif
}

// Rows [y0, y1) of the 3x3 patch matrix: one row per output position,
// columns ordered (ky, kx, c) to match the [3 x 3 x Cin x Cout] kernel layout.
template <typename T>
void im2col(const T* in, std::size_t h, std::size_t w, std::size_t c, std::size_t y0,
            std::size_t y1, T* cols) {
  const std::size_t row_len = 9 * c;
  for (std::size_t y = y0; y < y1; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      T* row = cols + ((y - y0) * w + x) * row_len;
      for (int ky = 0; ky < 3; ++ky) {
        const auto sy = static_cast<std::ptrdiff_t>(y) + ky - 1;
        for (int kx = 0; kx < 3; ++kx) {
          const auto sx = static_cast<std::ptrdiff_t>(x) + kx - 1;
          T* dst = row + (ky * 3 + kx) * c;
          if (sy < 0 || sx < 0 || sy >= static_cast<std::ptrdiff_t>(h) ||
              sx >= static_cast<std::ptrdiff_t>(w)) {
            std::fill_n(dst, c, T(0));
          } else {
            std::memcpy(dst, in + (static_cast<std::size_t>(sy) * w + static_cast<std::size_t>(sx)) * c,
                        c * sizeof(T));
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* cols, std::size_t h, std::size_t w, std::size_t c, std::size_t y0,
                std::size_t y1, T* d_in) {
  const std::size_t row_len = 9 * c;
  for (std::size_t y = y0; y < y1; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const T* row = cols + ((y - y0) * w + x) * row_len;
      for (int ky = 0; ky < 3; ++ky) {
        const auto sy = static_cast<std::ptrdiff_t>(y) + ky - 1;
        if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) continue;
        for (int kx = 0; kx < 3; ++kx) {
          const auto sx = static_cast<std::ptrdiff_t>(x) + kx - 1;
          if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(w)) continue;
          const T* src = row + (ky * 3 + kx) * c;
          T* dst = d_in + (static_cast<std::size_t>(sy) * w + static_cast<std::size_t>(sx)) * c;
          for (std::size_t ci = 0; ci < c; ++ci) dst[ci] += src[ci];
        }
      }
    }
  }
}

struct ConvDims {
  std::size_t h, w, cin, cout;
};

template <typename T>
ConvDims check_conv(const BasicTensor<T>& input, const BasicTensor<T>& kernels) {
  require(input.rank() == 3, "conv2d: input must be [H x W x Cin], got " +
                                 shape_string(input.shape()));
  require(kernels.rank() == 4 && kernels.dim(0) == 3 && kernels.dim(1) == 3,
          "conv2d: kernels must be [3 x 3 x Cin x Cout], got " + shape_string(kernels.shape()));
  require(kernels.dim(2) == input.dim(2),
          "conv2d: channel mismatch, input has " + std::to_string(input.dim(2)) +
              " channels, kernels expect " + std::to_string(kernels.dim(2)));
  return {input.dim(0), input.dim(1), input.dim(2), kernels.dim(3)};
}

}  // namespace

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& kernels,
                      const BasicTensor<T>& bias, Conv2dCache<T>* cache) {
  const auto d = check_conv(input, kernels);
  require(bias.size() == d.cout, "conv2d: bias length must equal Cout");

  BasicTensor<T> out({d.h, d.w, d.cout});
  const std::size_t k = 9 * d.cin;
  const std::size_t rows_per_block = std::max<std::size_t>(1, kBlockPositions / d.w);
  AlignedVector<T> cols(rows_per_block * d.w * k);
  const CMapR<T> kmat(kernels.ptr(), static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(d.cout));
  const Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> b(bias.ptr(),
                                                                static_cast<Eigen::Index>(d.cout));

  for (std::size_t y0 = 0; y0 < d.h; y0 += rows_per_block) {
    const std::size_t y1 = std::min(d.h, y0 + rows_per_block);
    const auto n = static_cast<Eigen::Index>((y1 - y0) * d.w);
    im2col(input.ptr(), d.h, d.w, d.cin, y0, y1, cols.data());
    const CMapR<T> cmat(cols.data(), n, static_cast<Eigen::Index>(k));
    MapR<T> omat(out.ptr() + y0 * d.w * d.cout, n, static_cast<Eigen::Index>(d.cout));
    omat.noalias() = cmat * kmat;
    omat.rowwise() += b;
  }

  if (cache) {
    cache->input = input;
    cache->valid = true;
  }
  check_finite(out, "conv2d");
  return out;
}

template <typename T>
LayerGrad<T> conv2d_backward(const Conv2dCache<T>& cache, const BasicTensor<T>& kernels,
                             const BasicTensor<T>& d_out, bool need_d_input) {
  require(cache.valid, "conv2d_backward: forward cache is empty");
  const auto d = check_conv(cache.input, kernels);
  require(d_out.shape() == Shape({d.h, d.w, d.cout}), "conv2d_backward: d_out shape mismatch");

  LayerGrad<T> g;
  g.d_weights = BasicTensor<T>(kernels.shape());
  g.d_bias = BasicTensor<T>({d.cout});
  if (need_d_input) g.d_input = BasicTensor<T>(cache.input.shape());

  const std::size_t k = 9 * d.cin;
  const std::size_t rows_per_block = std::max<std::size_t>(1, kBlockPositions / d.w);
  AlignedVector<T> cols(rows_per_block * d.w * k);
  const CMapR<T> kmat(kernels.ptr(), static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(d.cout));
  MapR<T> dk(g.d_weights.ptr(), static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(d.cout));

  const CMapR<T> dout_all(d_out.ptr(), static_cast<Eigen::Index>(d.h * d.w),
                          static_cast<Eigen::Index>(d.cout));
  Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(g.d_bias.ptr(), static_cast<Eigen::Index>(d.cout)) =
      dout_all.colwise().sum();

  for (std::size_t y0 = 0; y0 < d.h; y0 += rows_per_block) {
    const std::size_t y1 = std::min(d.h, y0 + rows_per_block);
    const auto n = static_cast<Eigen::Index>((y1 - y0) * d.w);
    const CMapR<T> dout(d_out.ptr() + y0 * d.w * d.cout, n, static_cast<Eigen::Index>(d.cout));
    im2col(cache.input.ptr(), d.h, d.w, d.cin, y0, y1, cols.data());
    MapR<T> cmat(cols.data(), n, static_cast<Eigen::Index>(k));
    dk.noalias() += cmat.transpose() * dout;
    if (need_d_input) {
      cmat.noalias() = dout * kmat.transpose();
      col2im_add(cols.data(), d.h, d.w, d.cin, y0, y1, g.d_input.ptr());
    }
  }
  return g;
}

template <typename T>
BasicTensor<T> conv2d_relu_maxpool(const BasicTensor<T>& input, const BasicTensor<T>& kernels,
                                   const BasicTensor<T>& bias) {
  const auto d = check_conv(input, kernels);
  require(bias.size() == d.cout, "conv2d: bias length must equal Cout");
  require(d.h >= 2 && d.w >= 2, "maxpool2x2: H and W must be >= 2, got " + shape_string(input.shape()));
  const std::size_t oh = d.h / 2, ow = d.w / 2, c = d.cout;
  BasicTensor<T> out({oh, ow, c});

  const std::size_t k = 9 * d.cin;
  const std::size_t rows_per_block = std::max<std::size_t>(2, (kBlockPositions / d.w) & ~std::size_t{1});
  AlignedVector<T> cols(rows_per_block * d.w * k);
  AlignedVector<T> conv(rows_per_block * d.w * c);
  const CMapR<T> kmat(kernels.ptr(), static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(c));

  // A trailing odd row is never pooled, so it is never computed.
  for (std::size_t y0 = 0; y0 < 2 * oh; y0 += rows_per_block) {
    const std::size_t y1 = std::min(2 * oh, y0 + rows_per_block);
    const auto n = static_cast<Eigen::Index>((y1 - y0) * d.w);
    im2col(input.ptr(), d.h, d.w, d.cin, y0, y1, cols.data());
    MapR<T>(conv.data(), n, static_cast<Eigen::Index>(c)).noalias() =
        CMapR<T>(cols.data(), n, static_cast<Eigen::Index>(k)) * kmat;
    for (std::size_t y = y0; y < y1; y += 2) {
      const T* r0 = conv.data() + (y - y0) * d.w * c;
      const T* r1 = r0 + d.w * c;
      T* o = out.ptr() + (y / 2) * ow * c;
      for (std::size_t x = 0; x < ow; ++x) {
        const T* a = r0 + 2 * x * c;
        const T* b = r1 + 2 * x * c;
        for (std::size_t ch = 0; ch < c; ++ch) {
          // max(v) + bias == max(v + bias), and relu commutes with max.
          const T m = std::max(std::max(a[ch], a[c + ch]), std::max(b[ch], b[c + ch])) + bias[ch];
          o[x * c + ch] = m > T(0) ? m : T(0);
        }
      }
    }
  }
  check_finite(out, "conv2d_relu_maxpool");
  return out;
}

template <typename T>
BasicTensor<T> conv2d_relu_global_max(const BasicTensor<T>& input, const BasicTensor<T>& kernels,
                                      const BasicTensor<T>& bias) {
  const auto d = check_conv(input, kernels);
  require(bias.size() == d.cout, "conv2d: bias length must equal Cout");
  const std::size_t c = d.cout;
  const std::size_t k = 9 * d.cin;
  const std::size_t rows_per_block = std::max<std::size_t>(1, kBlockPositions / d.w);
  AlignedVector<T> cols(rows_per_block * d.w * k);
  AlignedVector<T> conv(rows_per_block * d.w * c);
  std::vector<T> best(c, -std::numeric_limits<T>::infinity());
  const CMapR<T> kmat(kernels.ptr(), static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(c));

  for (std::size_t y0 = 0; y0 < d.h; y0 += rows_per_block) {
    const std::size_t y1 = std::min(d.h, y0 + rows_per_block);
    const std::size_t n = (y1 - y0) * d.w;
    im2col(input.ptr(), d.h, d.w, d.cin, y0, y1, cols.data());
    MapR<T>(conv.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(c)).noalias() =
        CMapR<T>(cols.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(k)) * kmat;
    for (std::size_t p = 0; p < n; ++p) {
      const T* row = conv.data() + p * c;
      for (std::size_t ch = 0; ch < c; ++ch) best[ch] = std::max(best[ch], row[ch]);
    }
  }
  BasicTensor<T> out({c});
  for (std::size_t ch = 0; ch < c; ++ch) {
    const T m = best[ch] + bias[ch];
    out[ch] = m > T(0) ? m : T(0);
  }
  check_finite(out, "conv2d_relu_global_max");
  return out;
}

template <typename T>
BasicTensor<T> maxpool2x2(const BasicTensor<T>& input, PoolCache* cache) {
  require(input.rank() == 3, "maxpool2x2: input must be [H x W x C]");
  const std::size_t h = input.dim(0), w = input.dim(1), c = input.dim(2);
  require(h >= 2 && w >= 2, "maxpool2x2: H and W must be >= 2, got " + shape_string(input.shape()));
  const std::size_t oh = h / 2, ow = w / 2;
  BasicTensor<T> out({oh, ow, c});
  std::vector<std::uint32_t> argmax(out.size());
  for (std::size_t y = 0; y < oh; ++y) {
    for (std::size_t x = 0; x < ow; ++x) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        std::size_t best = ((2 * y) * w + 2 * x) * c + ch;
        for (std::size_t dy = 0; dy < 2; ++dy) {
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const std::size_t idx = ((2 * y + dy) * w + 2 * x + dx) * c + ch;
            if (input[idx] > input[best]) best = idx;
          }
        }
        const std::size_t o = (y * ow + x) * c + ch;
        out[o] = input[best];
        argmax[o] = static_cast<std::uint32_t>(best);
      }
    }
  }
  if (cache) {
    cache->input_shape = input.shape();
    cache->argmax = std::move(argmax);
    cache->valid = true;
  }
  return out;
}

template <typename T>
LayerGrad<T> maxpool2x2_backward(const PoolCache& cache, const BasicTensor<T>& d_out) {
  require(cache.valid, "maxpool2x2_backward: forward cache is empty");
  require(d_out.size() == cache.argmax.size(), "maxpool2x2_backward: d_out shape mismatch");
  LayerGrad<T> g;
  g.d_input = BasicTensor<T>(cache.input_shape);
  for (std::size_t i = 0; i < cache.argmax.size(); ++i) g.d_input[cache.argmax[i]] += d_out[i];
  return g;
}

template <typename T>
BasicTensor<T> global_max_pool(const BasicTensor<T>& input, PoolCache* cache) {
  require(input.rank() == 3 && input.dim(0) >= 1 && input.dim(1) >= 1,
          "global_max_pool: input must be [H x W x C] with H, W >= 1");
  const std::size_t c = input.dim(2);
  const std::size_t positions = input.dim(0) * input.dim(1);
  BasicTensor<T> out({c});
  std::vector<std::uint32_t> argmax(c);
  for (std::size_t ch = 0; ch < c; ++ch) {
    std::size_t best = ch;
    for (std::size_t p = 1; p < positions; ++p) {
      const std::size_t idx = p * c + ch;
      if (input[idx] > input[best]) best = idx;
    }
    out[ch] = input[best];
    argmax[ch] = static_cast<std::uint32_t>(best);
  }
  if (cache) {
    cache->input_shape = input.shape();
    cache->argmax = std::move(argmax);
    cache->valid = true;
  }
  return out;
}

template <typename T>
LayerGrad<T> global_max_pool_backward(const PoolCache& cache, const BasicTensor<T>& d_out) {
  require(cache.valid, "global_max_pool_backward: forward cache is empty");
  require(d_out.size() == cache.argmax.size(), "global_max_pool_backward: d_out shape mismatch");
  LayerGrad<T> g;
  g.d_input = BasicTensor<T>(cache.input_shape);
  for (std::size_t ch = 0; ch < cache.argmax.size(); ++ch) g.d_input[cache.argmax[ch]] += d_out[ch];
  return g;
}

template <typename T>
BasicTensor<T> dense(const BasicTensor<T>& input, const BasicTensor<T>& weights,
                     const BasicTensor<T>& bias, DenseCache<T>* cache) {
  require(weights.rank() == 2, "dense: weights must be [N x M]");
  const std::size_t n = weights.dim(0), m = weights.dim(1);
  require(input.size() == n, "dense: input length " + std::to_string(input.size()) +
                                 " does not match weights " + shape_string(weights.shape()));
  require(bias.size() == m, "dense: bias length must equal M");
  BasicTensor<T> out({m});
  for (std::size_t j = 0; j < m; ++j) out[j] = bias[j];
  for (std::size_t i = 0; i < n; ++i) {
    const T xi = input[i];
    const T* row = weights.ptr() + i * m;
    for (std::size_t j = 0; j < m; ++j) out[j] += xi * row[j];
  }
  if (cache) {
    cache->input = input;
    cache->valid = true;
  }
  check_finite(out, "dense");
  return out;
}

template <typename T>
LayerGrad<T> dense_backward(const DenseCache<T>& cache, const BasicTensor<T>& weights,
                            const BasicTensor<T>& d_out) {
  require(cache.valid, "dense_backward: forward cache is empty");
  const std::size_t n = weights.dim(0), m = weights.dim(1);
  require(d_out.size() == m && cache.input.size() == n, "dense_backward: shape mismatch");
  LayerGrad<T> g;
  g.d_weights = BasicTensor<T>(weights.shape());
  g.d_bias = BasicTensor<T>({m});
  g.d_input = BasicTensor<T>(cache.input.shape());
  for (std::size_t j = 0; j < m; ++j) g.d_bias[j] = d_out[j];
  for (std::size_t i = 0; i < n; ++i) {
    const T* row = weights.ptr() + i * m;
    T* grow = g.d_weights.ptr() + i * m;
    T acc = 0;
    for (std::size_t j = 0; j < m; ++j) {
      grow[j] = cache.input[i] * d_out[j];
      acc += row[j] * d_out[j];
    }
    g.d_input[i] = acc;
  }
  return g;
}

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& input, MaskCache* cache) {
  BasicTensor<T> out = input;
  std::vector<std::uint8_t> mask;
  if (cache) mask.resize(input.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const bool on = input[i] > T(0);
    if (!on) out[i] = T(0);
    if (cache) mask[i] = on;
  }
  if (cache) {
    cache->mask = std::move(mask);
    cache->shape = input.shape();
    cache->scale = 1.0;
    cache->valid = true;
  }
  return out;
}

template <typename T>
LayerGrad<T> relu_backward(const MaskCache& cache, const BasicTensor<T>& d_out) {
  require(cache.valid, "relu_backward: forward cache is empty");
  require(d_out.size() == cache.mask.size(), "relu_backward: d_out shape mismatch");
  LayerGrad<T> g;
  g.d_input = BasicTensor<T>(cache.shape);
  for (std::size_t i = 0; i < d_out.size(); ++i) g.d_input[i] = cache.mask[i] ? d_out[i] : T(0);
  return g;
}

template <typename T>
BasicTensor<T> dropout(const BasicTensor<T>& input, double rate, bool training, Rng* rng,
                       MaskCache* cache) {
  require(rate >= 0.0 && rate < 1.0, "dropout: rate must be in [0, 1)");
  if (!training || rate == 0.0) {
    if (cache) {
      cache->mask.assign(input.size(), 1);
      cache->shape = input.shape();
      cache->scale = 1.0;
      cache->valid = true;
    }
    return input;
  }
  require(rng != nullptr, "dropout: training mode requires an RNG");
  const T scale = static_cast<T>(1.0 / (1.0 - rate));
  BasicTensor<T> out(input.shape());
  std::vector<std::uint8_t> mask(input.size());
  for (std::size_t i = 0; i < input.size(); ++i) {
    const bool keep = uniform01(*rng) >= rate;
    mask[i] = keep;
    out[i] = keep ? input[i] * scale : T(0);
  }
  if (cache) {
    cache->mask = std::move(mask);
    cache->shape = input.shape();
    cache->scale = 1.0 / (1.0 - rate);
    cache->valid = true;
  }
  return out;
}

template <typename T>
LayerGrad<T> dropout_backward(const MaskCache& cache, const BasicTensor<T>& d_out) {
  require(cache.valid, "dropout_backward: forward cache is empty");
  require(d_out.size() == cache.mask.size(), "dropout_backward: d_out shape mismatch");
  LayerGrad<T> g;
  g.d_input = BasicTensor<T>(cache.shape);
  const T scale = static_cast<T>(cache.scale);
  for (std::size_t i = 0; i < d_out.size(); ++i) {
    g.d_input[i] = cache.mask[i] ? d_out[i] * scale : T(0);
  }
  return g;
}

#define MUSICNET_INSTANTIATE_NN(T)                                                             \
  template BasicTensor<T> conv2d(const BasicTensor<T>&, const BasicTensor<T>&,                 \
                                 const BasicTensor<T>&, Conv2dCache<T>*);                      \
  template LayerGrad<T> conv2d_backward(const Conv2dCache<T>&, const BasicTensor<T>&,          \
                                        const BasicTensor<T>&, bool);                          \
  template BasicTensor<T> maxpool2x2(const BasicTensor<T>&, PoolCache*);                       \
  template LayerGrad<T> maxpool2x2_backward(const PoolCache&, const BasicTensor<T>&);          \
  template BasicTensor<T> conv2d_relu_maxpool(const BasicTensor<T>&, const BasicTensor<T>&,    \
                                              const BasicTensor<T>&);                          \
  template BasicTensor<T> conv2d_relu_global_max(const BasicTensor<T>&, const BasicTensor<T>&, \
                                                 const BasicTensor<T>&);                       \
  template BasicTensor<T> global_max_pool(const BasicTensor<T>&, PoolCache*);                  \
  template LayerGrad<T> global_max_pool_backward(const PoolCache&, const BasicTensor<T>&);     \
  template BasicTensor<T> dense(const BasicTensor<T>&, const BasicTensor<T>&,                  \
                                const BasicTensor<T>&, DenseCache<T>*);                        \
  template LayerGrad<T> dense_backward(const DenseCache<T>&, const BasicTensor<T>&,            \
                                       const BasicTensor<T>&);                                 \
  template BasicTensor<T> relu(const BasicTensor<T>&, MaskCache*);                             \
  template LayerGrad<T> relu_backward(const MaskCache&, const BasicTensor<T>&);                \
  template BasicTensor<T> dropout(const BasicTensor<T>&, double, bool, Rng*, MaskCache*);      \
  template LayerGrad<T> dropout_backward(const MaskCache&, const BasicTensor<T>&);

MUSICNET_INSTANTIATE_NN(float)
MUSICNET_INSTANTIATE_NN(double)

#undef MUSICNET_INSTANTIATE_NN

}  // namespace musicnet::nn
