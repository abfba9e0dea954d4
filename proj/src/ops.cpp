#include "atpnet/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

#include "atpnet/errors.hpp"

namespace atp {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

void require(bool ok, const std::string& message) {
  if (!ok) throw ShapeError(message);
}

struct ConvGeometry {
  std::int64_t batch, in_c, in_h, in_w;
  std::int64_t out_c, kh, kw, out_h, out_w;
  std::int64_t groups, in_per_group, out_per_group;
  std::int64_t sy, sx, py, px, dy, dx;

  std::int64_t patch() const { return in_per_group * kh * kw; }
  std::int64_t positions() const { return out_h * out_w; }
  bool is_pointwise() const {
    return kh == 1 && kw == 1 && sy == 1 && sx == 1 && py == 0 && px == 0;
  }
};

// Gathers receptive fields of one group into a (patch x positions) matrix.
template <typename T>
void im2col(const T* in, const ConvGeometry& g, T* cols) {
  const std::int64_t positions = g.positions();
  for (std::int64_t c = 0; c < g.in_per_group; ++c) {
    const T* plane = in + c * g.in_h * g.in_w;
    for (std::int64_t ky = 0; ky < g.kh; ++ky) {
      for (std::int64_t kx = 0; kx < g.kw; ++kx) {
        T* row = cols + ((c * g.kh + ky) * g.kw + kx) * positions;
        for (std::int64_t oy = 0; oy < g.out_h; ++oy) {
          const std::int64_t iy = oy * g.sy - g.py + ky * g.dy;
          T* dst = row + oy * g.out_w;
          if (iy < 0 || iy >= g.in_h) {
            std::fill(dst, dst + g.out_w, T(0));
            continue;
          }
          const T* src = plane + iy * g.in_w;
          for (std::int64_t ox = 0; ox < g.out_w; ++ox) {
            const std::int64_t ix = ox * g.sx - g.px + kx * g.dx;
            dst[ox] = (ix >= 0 && ix < g.in_w) ? src[ix] : T(0);
          }
        }
      }
    }
  }
}

// Scatter-adds a column matrix back onto the input plane layout.
template <typename T>
void col2im(const T* cols, const ConvGeometry& g, T* in) {
  const std::int64_t positions = g.positions();
  for (std::int64_t c = 0; c < g.in_per_group; ++c) {
    T* plane = in + c * g.in_h * g.in_w;
    for (std::int64_t ky = 0; ky < g.kh; ++ky) {
      for (std::int64_t kx = 0; kx < g.kw; ++kx) {
        const T* row = cols + ((c * g.kh + ky) * g.kw + kx) * positions;
        for (std::int64_t oy = 0; oy < g.out_h; ++oy) {
          const std::int64_t iy = oy * g.sy - g.py + ky * g.dy;
          if (iy < 0 || iy >= g.in_h) continue;
          const T* src = row + oy * g.out_w;
          T* dst = plane + iy * g.in_w;
          for (std::int64_t ox = 0; ox < g.out_w; ++ox) {
            const std::int64_t ix = ox * g.sx - g.px + kx * g.dx;
            if (ix >= 0 && ix < g.in_w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

// One input channel per group: direct loops beat a 1-row GEMM.
template <typename T>
void depthwise_forward(const T* in, const T* weight, const ConvGeometry& g, T* out) {
  for (std::int64_t n = 0; n < g.batch; ++n) {
    for (std::int64_t o = 0; o < g.out_c; ++o) {
      const std::int64_t ic = o / g.out_per_group;
      const T* plane = in + (n * g.in_c + ic) * g.in_h * g.in_w;
      const T* w = weight + o * g.kh * g.kw;
      T* dst = out + (n * g.out_c + o) * g.positions();
      for (std::int64_t ky = 0; ky < g.kh; ++ky) {
        for (std::int64_t kx = 0; kx < g.kw; ++kx) {
          const T tap = w[ky * g.kw + kx];
          for (std::int64_t oy = 0; oy < g.out_h; ++oy) {
            const std::int64_t iy = oy * g.sy - g.py + ky * g.dy;
            if (iy < 0 || iy >= g.in_h) continue;
            const T* src = plane + iy * g.in_w;
            T* row = dst + oy * g.out_w;
            for (std::int64_t ox = 0; ox < g.out_w; ++ox) {
              const std::int64_t ix = ox * g.sx - g.px + kx * g.dx;
              if (ix >= 0 && ix < g.in_w) row[ox] += tap * src[ix];
            }
          }
        }
      }
    }
  }
}

template <typename T>
void depthwise_backward(const T* in, const T* weight, const T* grad_out, const ConvGeometry& g,
                        T* grad_in, T* grad_weight) {
  for (std::int64_t n = 0; n < g.batch; ++n) {
    for (std::int64_t o = 0; o < g.out_c; ++o) {
      const std::int64_t ic = o / g.out_per_group;
      const std::int64_t plane_offset = (n * g.in_c + ic) * g.in_h * g.in_w;
      const T* go = grad_out + (n * g.out_c + o) * g.positions();
      for (std::int64_t ky = 0; ky < g.kh; ++ky) {
        for (std::int64_t kx = 0; kx < g.kw; ++kx) {
          const T tap = weight[o * g.kh * g.kw + ky * g.kw + kx];
          T tap_grad = 0;
          for (std::int64_t oy = 0; oy < g.out_h; ++oy) {
            const std::int64_t iy = oy * g.sy - g.py + ky * g.dy;
            if (iy < 0 || iy >= g.in_h) continue;
            const T* row = go + oy * g.out_w;
            const std::int64_t base = plane_offset + iy * g.in_w;
            for (std::int64_t ox = 0; ox < g.out_w; ++ox) {
              const std::int64_t ix = ox * g.sx - g.px + kx * g.dx;
              if (ix < 0 || ix >= g.in_w) continue;
              if (grad_weight) tap_grad += in[base + ix] * row[ox];
              if (grad_in) grad_in[base + ix] += tap * row[ox];
            }
          }
          if (grad_weight) grad_weight[o * g.kh * g.kw + ky * g.kw + kx] += tap_grad;
        }
      }
    }
  }
}

}  // namespace

std::int64_t conv_output_extent(std::int64_t input, std::int64_t kernel, std::int64_t stride,
                                std::int64_t padding, std::int64_t dilation) {
  const std::int64_t effective = dilation * (kernel - 1) + 1;
  const std::int64_t span = input + 2 * padding - effective;
  if (span < 0) return 0;
  return span / stride + 1;
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const std::optional<Tensor<T>>& bias,
                 const Conv2dOptions& options) {
  const Shape& is = input.shape();
  const Shape& ws = weight.shape();
  require(options.groups >= 1, "conv2d: groups must be positive");
  for (int a = 0; a < 2; ++a) {
    require(options.stride[a] >= 1, "conv2d: stride must be positive");
    require(options.dilation[a] >= 1, "conv2d: dilation must be positive");
    require(options.padding[a] >= 0, "conv2d: padding must be non-negative");
  }
  require(is.c() % options.groups == 0,
          "conv2d: input channels " + std::to_string(is.c()) + " not divisible by groups " +
              std::to_string(options.groups));
  require(ws.n() % options.groups == 0,
          "conv2d: output channels " + std::to_string(ws.n()) + " not divisible by groups " +
              std::to_string(options.groups));
  require(ws.c() == is.c() / options.groups,
          "conv2d: weight in-channel extent " + std::to_string(ws.c()) + " does not match input channels " +
              std::to_string(is.c()) + " / groups " + std::to_string(options.groups));
  if (bias) {
    require(bias->shape() == Shape(1, ws.n(), 1, 1),
            "conv2d: bias shape " + bias->shape().to_string() + " must be (1, " + std::to_string(ws.n()) +
                ", 1, 1)");
  }

  ConvGeometry g{};
  g.batch = is.n();
  g.in_c = is.c();
  g.in_h = is.h();
  g.in_w = is.w();
  g.out_c = ws.n();
  g.kh = ws.h();
  g.kw = ws.w();
  g.sy = options.stride[0];
  g.sx = options.stride[1];
  g.py = options.padding[0];
  g.px = options.padding[1];
  g.dy = options.dilation[0];
  g.dx = options.dilation[1];
  g.groups = options.groups;
  g.in_per_group = is.c() / options.groups;
  g.out_per_group = ws.n() / options.groups;
  g.out_h = conv_output_extent(g.in_h, g.kh, g.sy, g.py, g.dy);
  g.out_w = conv_output_extent(g.in_w, g.kw, g.sx, g.px, g.dx);
  require(g.out_h >= 1, "conv2d: output height would be < 1 for input height " + std::to_string(g.in_h));
  require(g.out_w >= 1, "conv2d: output width would be < 1 for input width " + std::to_string(g.in_w));

  const Shape out_shape{g.batch, g.out_c, g.out_h, g.out_w};
  std::vector<T> out(static_cast<std::size_t>(out_shape.numel()), T(0));
  const T* in = input.data().data();
  const T* w = weight.data().data();
  const std::int64_t positions = g.positions();
  const bool depthwise = g.in_per_group == 1 && g.groups > 1;

  if (depthwise) {
    depthwise_forward(in, w, g, out.data());
  } else {
    std::vector<T> cols(g.is_pointwise() ? 0 : static_cast<std::size_t>(g.patch() * positions));
    for (std::int64_t n = 0; n < g.batch; ++n) {
      for (std::int64_t grp = 0; grp < g.groups; ++grp) {
        const T* src = in + (n * g.in_c + grp * g.in_per_group) * g.in_h * g.in_w;
        const T* col_ptr = src;
        if (!g.is_pointwise()) {
          im2col(src, g, cols.data());
          col_ptr = cols.data();
        }
        ConstMatMap<T> wmat(w + grp * g.out_per_group * g.patch(), g.out_per_group, g.patch());
        ConstMatMap<T> cmat(col_ptr, g.patch(), positions);
        MatMap<T> omat(out.data() + (n * g.out_c + grp * g.out_per_group) * positions, g.out_per_group,
                       positions);
        omat.noalias() = wmat * cmat;
      }
    }
  }
  if (bias) {
    const T* b = bias->data().data();
    for (std::int64_t n = 0; n < g.batch; ++n) {
      for (std::int64_t o = 0; o < g.out_c; ++o) {
        T* dst = out.data() + (n * g.out_c + o) * positions;
        for (std::int64_t p = 0; p < positions; ++p) dst[p] += b[o];
      }
    }
  }

  std::vector<Tensor<T>> inputs{input, weight};
  if (bias) inputs.push_back(*bias);
  return make_op_result<T>(out_shape, std::move(out), inputs, [g, depthwise](detail::Node<T>& self) {
    auto& in_node = *self.parents[0];
    auto& w_node = *self.parents[1];
    const T* go = self.grad.data();
    const std::int64_t positions = g.positions();
    T* grad_in = in_node.requires_grad ? in_node.grad_buffer().data() : nullptr;
    T* grad_w = w_node.requires_grad ? w_node.grad_buffer().data() : nullptr;

    if (self.parents.size() > 2 && self.parents[2]->requires_grad) {
      T* gb = self.parents[2]->grad_buffer().data();
      for (std::int64_t n = 0; n < g.batch; ++n) {
        for (std::int64_t o = 0; o < g.out_c; ++o) {
          const T* src = go + (n * g.out_c + o) * positions;
          T acc = 0;
          for (std::int64_t p = 0; p < positions; ++p) acc += src[p];
          gb[o] += acc;
        }
      }
    }
    if (!grad_in && !grad_w) return;

    if (depthwise) {
      depthwise_backward(in_node.data.data(), w_node.data.data(), go, g, grad_in, grad_w);
      return;
    }
    const bool pointwise = g.is_pointwise();
    std::vector<T> cols(pointwise ? 0 : static_cast<std::size_t>(g.patch() * positions));
    std::vector<T> dcols(pointwise ? 0 : static_cast<std::size_t>(g.patch() * positions));
    for (std::int64_t n = 0; n < g.batch; ++n) {
      for (std::int64_t grp = 0; grp < g.groups; ++grp) {
        const std::int64_t in_offset = (n * g.in_c + grp * g.in_per_group) * g.in_h * g.in_w;
        ConstMatMap<T> gmat(go + (n * g.out_c + grp * g.out_per_group) * positions, g.out_per_group,
                            positions);
        if (grad_w) {
          const T* col_ptr = in_node.data.data() + in_offset;
          if (!pointwise) {
            im2col(col_ptr, g, cols.data());
            col_ptr = cols.data();
          }
          ConstMatMap<T> cmat(col_ptr, g.patch(), positions);
          MatMap<T> gw(grad_w + grp * g.out_per_group * g.patch(), g.out_per_group, g.patch());
          gw.noalias() += gmat * cmat.transpose();
        }
        if (grad_in) {
          ConstMatMap<T> wmat(w_node.data.data() + grp * g.out_per_group * g.patch(), g.out_per_group,
                              g.patch());
          if (pointwise) {
            MatMap<T> gi(grad_in + in_offset, g.patch(), positions);
            gi.noalias() += wmat.transpose() * gmat;
          } else {
            MatMap<T> dc(dcols.data(), g.patch(), positions);
            dc.noalias() = wmat.transpose() * gmat;
            col2im(dcols.data(), g, grad_in + in_offset);
          }
        }
      }
    }
  });
}

template <typename T>
Tensor<T> depthwise_separable_conv(const Tensor<T>& input, const Tensor<T>& depth_weight,
                                   const Tensor<T>& point_weight, const std::optional<Tensor<T>>& bias,
                                   std::int64_t padding, std::int64_t dilation) {
  const std::int64_t channels = input.shape().c();
  require(depth_weight.shape().n() == channels && depth_weight.shape().c() == 1,
          "depthwise_separable_conv: depth weight " + depth_weight.shape().to_string() + " must be (" +
              std::to_string(channels) + ", 1, k, k)");
  require(point_weight.shape().h() == 1 && point_weight.shape().w() == 1,
          "depthwise_separable_conv: point weight must be 1x1, got " + point_weight.shape().to_string());
  Conv2dOptions depth;
  depth.padding = {padding, padding};
  depth.dilation = {dilation, dilation};
  depth.groups = channels;
  const Tensor<T> spatial = conv2d<T>(input, depth_weight, std::nullopt, depth);
  return conv2d<T>(spatial, point_weight, bias, {});
}

template <typename T>
Tensor<T> pixel_shuffle(const Tensor<T>& input, std::int64_t upscale) {
  const Shape& s = input.shape();
  require(upscale >= 1, "pixel_shuffle: upscale must be positive");
  const std::int64_t ss = upscale * upscale;
  require(s.c() % ss == 0, "pixel_shuffle: channels " + std::to_string(s.c()) + " not divisible by " +
                               std::to_string(ss));
  const Shape out_shape{s.n(), s.c() / ss, s.h() * upscale, s.w() * upscale};
  // index[k] is the input offset feeding output element k.
  std::vector<std::int64_t> index(static_cast<std::size_t>(s.numel()));
  std::size_t k = 0;
  for (std::int64_t n = 0; n < out_shape.n(); ++n)
    for (std::int64_t c = 0; c < out_shape.c(); ++c)
      for (std::int64_t y = 0; y < out_shape.h(); ++y)
        for (std::int64_t x = 0; x < out_shape.w(); ++x) {
          const std::int64_t ic = c * ss + (y % upscale) * upscale + (x % upscale);
          index[k++] = ((n * s.c() + ic) * s.h() + y / upscale) * s.w() + x / upscale;
        }
  std::vector<T> out(index.size());
  const T* in = input.data().data();
  for (std::size_t i = 0; i < index.size(); ++i) out[i] = in[index[i]];
  return make_op_result<T>(out_shape, std::move(out), {input}, [index = std::move(index)](detail::Node<T>& self) {
    T* gi = self.parents[0]->grad_buffer().data();
    for (std::size_t i = 0; i < index.size(); ++i) gi[index[i]] += self.grad[i];
  });
}

template <typename T>
Tensor<T> pixel_unshuffle(const Tensor<T>& input, std::int64_t downscale) {
  const Shape& s = input.shape();
  require(downscale >= 1, "pixel_unshuffle: downscale must be positive");
  require(s.h() % downscale == 0 && s.w() % downscale == 0,
          "pixel_unshuffle: spatial extents of " + s.to_string() + " not divisible by " +
              std::to_string(downscale));
  const std::int64_t ss = downscale * downscale;
  const Shape out_shape{s.n(), s.c() * ss, s.h() / downscale, s.w() / downscale};
  std::vector<std::int64_t> index(static_cast<std::size_t>(s.numel()));
  std::size_t k = 0;
  for (std::int64_t n = 0; n < out_shape.n(); ++n)
    for (std::int64_t oc = 0; oc < out_shape.c(); ++oc)
      for (std::int64_t y = 0; y < out_shape.h(); ++y)
        for (std::int64_t x = 0; x < out_shape.w(); ++x) {
          const std::int64_t c = oc / ss;
          const std::int64_t i = (oc % ss) / downscale;
          const std::int64_t j = oc % downscale;
          index[k++] = ((n * s.c() + c) * s.h() + y * downscale + i) * s.w() + x * downscale + j;
        }
  std::vector<T> out(index.size());
  const T* in = input.data().data();
  for (std::size_t i = 0; i < index.size(); ++i) out[i] = in[index[i]];
  return make_op_result<T>(out_shape, std::move(out), {input}, [index = std::move(index)](detail::Node<T>& self) {
    T* gi = self.parents[0]->grad_buffer().data();
    for (std::size_t i = 0; i < index.size(); ++i) gi[index[i]] += self.grad[i];
  });
}

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& input, T slope) {
  auto in = input.data();
  std::vector<T> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] > T(0) ? in[i] : slope * in[i];
  return make_op_result<T>(input.shape(), std::move(out), {input}, [slope](detail::Node<T>& self) {
    auto& parent = *self.parents[0];
    T* gi = parent.grad_buffer().data();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      gi[i] += parent.data[i] > T(0) ? self.grad[i] : slope * self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& parts) {
  require(!parts.empty(), "concat_channels: no inputs");
  const Shape& first = parts.front().shape();
  std::int64_t channels = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    require(s.n() == first.n(), "concat_channels: batch mismatch " + s.to_string() + " vs " + first.to_string());
    require(s.h() == first.h(), "concat_channels: height mismatch " + s.to_string() + " vs " + first.to_string());
    require(s.w() == first.w(), "concat_channels: width mismatch " + s.to_string() + " vs " + first.to_string());
    channels += s.c();
  }
  const Shape out_shape{first.n(), channels, first.h(), first.w()};
  const std::int64_t plane = first.h() * first.w();
  std::vector<T> out(static_cast<std::size_t>(out_shape.numel()));
  std::vector<std::int64_t> offsets;
  std::int64_t offset = 0;
  for (const auto& p : parts) {
    offsets.push_back(offset);
    const std::int64_t block = p.shape().c() * plane;
    for (std::int64_t n = 0; n < first.n(); ++n) {
      std::copy_n(p.data().data() + n * block, block, out.data() + n * channels * plane + offset * plane);
    }
    offset += p.shape().c();
  }
  return make_op_result<T>(out_shape, std::move(out), parts, [offsets, channels, plane](detail::Node<T>& self) {
    const std::int64_t batch = self.shape.n();
    for (std::size_t k = 0; k < self.parents.size(); ++k) {
      auto& parent = *self.parents[k];
      if (!parent.requires_grad) continue;
      const std::int64_t block = parent.shape.c() * plane;
      T* gi = parent.grad_buffer().data();
      for (std::int64_t n = 0; n < batch; ++n) {
        const T* src = self.grad.data() + n * channels * plane + offsets[k] * plane;
        for (std::int64_t i = 0; i < block; ++i) gi[n * block + i] += src[i];
      }
    }
  });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.shape() == b.shape(), "add: shape mismatch " + a.shape().to_string() + " vs " + b.shape().to_string());
  auto x = a.data();
  auto y = b.data();
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + y[i];
  return make_op_result<T>(a.shape(), std::move(out), {a, b}, [](detail::Node<T>& self) {
    for (auto& parent : self.parents) {
      if (!parent->requires_grad) continue;
      T* gi = parent->grad_buffer().data();
      for (std::size_t i = 0; i < self.grad.size(); ++i) gi[i] += self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& input, T factor) {
  auto x = input.data();
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = factor * x[i];
  return make_op_result<T>(input.shape(), std::move(out), {input}, [factor](detail::Node<T>& self) {
    T* gi = self.parents[0]->grad_buffer().data();
    for (std::size_t i = 0; i < self.grad.size(); ++i) gi[i] += factor * self.grad[i];
  });
}

template <typename T>
Tensor<T> scale_by(const Tensor<T>& input, const Tensor<T>& factor) {
  require(factor.numel() == 1, "scale_by: factor must have one element, got " + factor.shape().to_string());
  const T s = factor.item();
  auto x = input.data();
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = s * x[i];
  return make_op_result<T>(input.shape(), std::move(out), {input, factor}, [](detail::Node<T>& self) {
    auto& in = *self.parents[0];
    auto& f = *self.parents[1];
    if (in.requires_grad) {
      T* gi = in.grad_buffer().data();
      for (std::size_t i = 0; i < self.grad.size(); ++i) gi[i] += f.data[0] * self.grad[i];
    }
    if (f.requires_grad) {
      T acc = 0;
      for (std::size_t i = 0; i < self.grad.size(); ++i) acc += in.data[i] * self.grad[i];
      f.grad_buffer()[0] += acc;
    }
  });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& input) {
  T acc = 0;
  for (T v : input.data()) acc += v;
  return make_op_result<T>(Shape{1, 1, 1, 1}, {acc}, {input}, [](detail::Node<T>& self) {
    T* gi = self.parents[0]->grad_buffer().data();
    const std::size_t count = self.parents[0]->data.size();
    for (std::size_t i = 0; i < count; ++i) gi[i] += self.grad[0];
  });
}

template <typename T>
Tensor<T> mse_loss(const Tensor<T>& prediction, const Tensor<T>& target) {
  require(prediction.shape() == target.shape(), "mse_loss: shape mismatch " + prediction.shape().to_string() +
                                                    " vs " + target.shape().to_string());
  auto p = prediction.data();
  auto t = target.data();
  const std::size_t count = p.size();
  require(count > 0, "mse_loss: empty tensors");
  // Accumulate in double so the float path does not drift with image size.
  double acc = 0;
  for (std::size_t i = 0; i < count; ++i) {
    const double d = static_cast<double>(p[i]) - static_cast<double>(t[i]);
    acc += d * d;
  }
  const T loss = static_cast<T>(acc / static_cast<double>(count));
  return make_op_result<T>(Shape{1, 1, 1, 1}, {loss}, {prediction, target}, [count](detail::Node<T>& self) {
    auto& pn = *self.parents[0];
    auto& tn = *self.parents[1];
    const T coeff = T(2) * self.grad[0] / static_cast<T>(count);
    if (pn.requires_grad) {
      T* g = pn.grad_buffer().data();
      for (std::size_t i = 0; i < count; ++i) g[i] += coeff * (pn.data[i] - tn.data[i]);
    }
    if (tn.requires_grad) {
      T* g = tn.grad_buffer().data();
      for (std::size_t i = 0; i < count; ++i) g[i] -= coeff * (pn.data[i] - tn.data[i]);
    }
  });
}

namespace {

template <typename T>
void check_attention_shapes(const Shape& q, const Shape& k, const Shape* v) {
  require(q == k, "spatial_attention: query " + q.to_string() + " and key " + k.to_string() + " differ");
  if (v) {
    require(v->n() == q.n() && v->h() == q.h() && v->w() == q.w(),
            "spatial_attention: value " + v->to_string() + " spatially incompatible with query " + q.to_string());
  }
}

// Softmax-normalized affinities for batch item n, written row-major (N x N).
template <typename T>
void affinity(const T* q, const T* k, std::int64_t channels, std::int64_t positions, T* out) {
  ConstMatMap<T> qm(q, channels, positions);
  ConstMatMap<T> km(k, channels, positions);
  MatMap<T> s(out, positions, positions);
  s.noalias() = qm.transpose() * km;
  for (std::int64_t i = 0; i < positions; ++i) {
    T* row = out + i * positions;
    const T peak = *std::max_element(row, row + positions);
    T total = 0;
    for (std::int64_t j = 0; j < positions; ++j) {
      row[j] = std::exp(row[j] - peak);
      total += row[j];
    }
    for (std::int64_t j = 0; j < positions; ++j) row[j] /= total;
  }
}

}  // namespace

template <typename T>
Tensor<T> attention_affinity(const Tensor<T>& query, const Tensor<T>& key) {
  const Shape& qs = query.shape();
  check_attention_shapes<T>(qs, key.shape(), nullptr);
  const std::int64_t positions = qs.h() * qs.w();
  std::vector<T> out(static_cast<std::size_t>(qs.n() * positions * positions));
  for (std::int64_t n = 0; n < qs.n(); ++n) {
    affinity(query.data().data() + n * qs.c() * positions, key.data().data() + n * qs.c() * positions, qs.c(),
             positions, out.data() + n * positions * positions);
  }
  return Tensor<T>(Shape{qs.n(), 1, positions, positions}, std::move(out));
}

template <typename T>
Tensor<T> spatial_attention(const Tensor<T>& query, const Tensor<T>& key, const Tensor<T>& value) {
  const Shape& qs = query.shape();
  const Shape& vs = value.shape();
  check_attention_shapes<T>(qs, key.shape(), &vs);
  const std::int64_t positions = qs.h() * qs.w();
  const std::int64_t cq = qs.c();
  const std::int64_t cv = vs.c();
  std::vector<T> attn(static_cast<std::size_t>(qs.n() * positions * positions));
  std::vector<T> out(static_cast<std::size_t>(vs.numel()));
  for (std::int64_t n = 0; n < qs.n(); ++n) {
    T* a = attn.data() + n * positions * positions;
    affinity(query.data().data() + n * cq * positions, key.data().data() + n * cq * positions, cq, positions, a);
    ConstMatMap<T> am(a, positions, positions);
    ConstMatMap<T> vm(value.data().data() + n * cv * positions, cv, positions);
    MatMap<T> om(out.data() + n * cv * positions, cv, positions);
    om.noalias() = vm * am.transpose();
  }
  return make_op_result<T>(vs, std::move(out), {query, key, value},
                           [attn = std::move(attn), positions, cq, cv](detail::Node<T>& self) {
    auto& qn = *self.parents[0];
    auto& kn = *self.parents[1];
    auto& vn = *self.parents[2];
    const std::int64_t batch = self.shape.n();
    RowMat<T> d_attn(positions, positions);
    RowMat<T> d_scores(positions, positions);
    for (std::int64_t n = 0; n < batch; ++n) {
      ConstMatMap<T> am(attn.data() + n * positions * positions, positions, positions);
      ConstMatMap<T> gout(self.grad.data() + n * cv * positions, cv, positions);
      ConstMatMap<T> vm(vn.data.data() + n * cv * positions, cv, positions);
      if (vn.requires_grad) {
        MatMap<T> gv(vn.grad_buffer().data() + n * cv * positions, cv, positions);
        gv.noalias() += gout * am;
      }
      if (!qn.requires_grad && !kn.requires_grad) continue;
      d_attn.noalias() = gout.transpose() * vm;
      for (std::int64_t i = 0; i < positions; ++i) {
        T dot = 0;
        for (std::int64_t j = 0; j < positions; ++j) dot += d_attn(i, j) * am(i, j);
        for (std::int64_t j = 0; j < positions; ++j) d_scores(i, j) = am(i, j) * (d_attn(i, j) - dot);
      }
      ConstMatMap<T> qm(qn.data.data() + n * cq * positions, cq, positions);
      ConstMatMap<T> km(kn.data.data() + n * cq * positions, cq, positions);
      if (qn.requires_grad) {
        MatMap<T> gq(qn.grad_buffer().data() + n * cq * positions, cq, positions);
        gq.noalias() += km * d_scores.transpose();
      }
      if (kn.requires_grad) {
        MatMap<T> gk(kn.grad_buffer().data() + n * cq * positions, cq, positions);
        gk.noalias() += qm * d_scores;
      }
    }
  });
}

#define ATP_INSTANTIATE_OPS(T)                                                                           \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const std::optional<Tensor<T>>&,         \
                            const Conv2dOptions&);                                                       \
  template Tensor<T> depthwise_separable_conv(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,      \
                                              const std::optional<Tensor<T>>&, std::int64_t, std::int64_t); \
  template Tensor<T> pixel_shuffle(const Tensor<T>&, std::int64_t);                                      \
  template Tensor<T> pixel_unshuffle(const Tensor<T>&, std::int64_t);                                    \
  template Tensor<T> leaky_relu(const Tensor<T>&, T);                                                    \
  template Tensor<T> concat_channels(const std::vector<Tensor<T>>&);                                     \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                            \
  template Tensor<T> scale(const Tensor<T>&, T);                                                         \
  template Tensor<T> scale_by(const Tensor<T>&, const Tensor<T>&);                                       \
  template Tensor<T> sum(const Tensor<T>&);                                                              \
  template Tensor<T> mse_loss(const Tensor<T>&, const Tensor<T>&);                                       \
  template Tensor<T> spatial_attention(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);            \
  template Tensor<T> attention_affinity(const Tensor<T>&, const Tensor<T>&);

ATP_INSTANTIATE_OPS(float)
ATP_INSTANTIATE_OPS(double)

}  // namespace atp
