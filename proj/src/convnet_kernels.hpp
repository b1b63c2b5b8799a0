#pragma once

// Scalar-generic forward and backward passes of the ConvNet. Instantiated for
// double (training, evaluation) and Dual (Hessian-vector products through the
// backward pass).

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "podd/dual.hpp"
#include "podd/model.hpp"

namespace podd::kernels {

using std::exp;
using std::log;
using std::sqrt;

template <class S>
struct BlockCache {
  std::vector<S> input;   // in_h × in_w × in_c
  std::vector<S> xhat;    // normalized conv output, in_h × in_w × out_c
  std::vector<S> affine;  // γ·xhat + β (pre-ReLU)
  std::vector<S> rstd;    // per output channel
};

template <class S>
struct SampleCache {
  std::vector<BlockCache<S>> blocks;
  std::vector<S> features;
  std::vector<S> logits;
  std::vector<S> log_probs;

  explicit SampleCache(const ConvNet& net) : blocks(net.blocks().size()) {
    for (std::size_t l = 0; l < blocks.size(); ++l) {
      const auto& b = net.blocks()[l];
      const std::size_t hw = static_cast<std::size_t>(b.in_h) * b.in_w;
      blocks[l].input.resize(hw * b.in_c);
      blocks[l].xhat.resize(hw * b.out_c);
      blocks[l].affine.resize(hw * b.out_c);
      blocks[l].rstd.resize(b.out_c);
    }
    features.resize(net.feature_dim());
    logits.resize(net.n_classes());
    log_probs.resize(net.n_classes());
  }
};

// 3×3 same-padding convolution, channel-last.
template <class S>
void conv3x3(const S* in, int h, int w, int cin, int cout, const S* weight, const S* bias, S* out) {
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      S* z = out + (static_cast<std::size_t>(y) * w + x) * cout;
      for (int o = 0; o < cout; ++o) z[o] = bias[o];
      for (int ky = 0; ky < 3; ++ky) {
        const int iy = y + ky - 1;
        if (iy < 0 || iy >= h) continue;
        for (int kx = 0; kx < 3; ++kx) {
          const int ix = x + kx - 1;
          if (ix < 0 || ix >= w) continue;
          const S* src = in + (static_cast<std::size_t>(iy) * w + ix) * cin;
          const S* wk = weight + static_cast<std::size_t>(ky * 3 + kx) * cin * cout;
          for (int i = 0; i < cin; ++i) {
            const S v = src[i];
            const S* wrow = wk + static_cast<std::size_t>(i) * cout;
            for (int o = 0; o < cout; ++o) z[o] += v * wrow[o];
          }
        }
      }
    }
  }
}

template <class S>
void conv3x3_backward(const S* in, int h, int w, int cin, int cout, const S* weight, const S* dz, S* d_weight,
                      S* d_bias, S* d_in /* nullable */) {
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const S* g = dz + (static_cast<std::size_t>(y) * w + x) * cout;
      for (int o = 0; o < cout; ++o) d_bias[o] += g[o];
      for (int ky = 0; ky < 3; ++ky) {
        const int iy = y + ky - 1;
        if (iy < 0 || iy >= h) continue;
        for (int kx = 0; kx < 3; ++kx) {
          const int ix = x + kx - 1;
          if (ix < 0 || ix >= w) continue;
          const std::size_t src_off = (static_cast<std::size_t>(iy) * w + ix) * cin;
          const S* src = in + src_off;
          const std::size_t wk_off = static_cast<std::size_t>(ky * 3 + kx) * cin * cout;
          S* dwk = d_weight + wk_off;
          for (int i = 0; i < cin; ++i) {
            const S v = src[i];
            S* dwrow = dwk + static_cast<std::size_t>(i) * cout;
            for (int o = 0; o < cout; ++o) dwrow[o] += v * g[o];
          }
          if (d_in != nullptr) {
            const S* wk = weight + wk_off;
            S* di = d_in + src_off;
            for (int i = 0; i < cin; ++i) {
              const S* wrow = wk + static_cast<std::size_t>(i) * cout;
              S acc = S(0.0);
              for (int o = 0; o < cout; ++o) acc += wrow[o] * g[o];
              di[i] += acc;
            }
          }
        }
      }
    }
  }
}

/// Runs the network on one image and fills the cache; returns nothing, the
/// logits are in cache.logits and log-softmax in cache.log_probs.
template <class S>
void forward_sample(const ConvNet& net, const S* params, const S* image, SampleCache<S>& cache) {
  const double eps = net.spec().norm_eps;
  std::copy(image, image + net.input_size(), cache.blocks[0].input.begin());
  std::vector<S> z;
  for (std::size_t l = 0; l < net.blocks().size(); ++l) {
    const auto& b = net.blocks()[l];
    auto& c = cache.blocks[l];
    const int hw = b.in_h * b.in_w;
    z.assign(static_cast<std::size_t>(hw) * b.out_c, S(0.0));
    conv3x3(c.input.data(), b.in_h, b.in_w, b.in_c, b.out_c, params + b.weight, params + b.bias, z.data());

    // Instance norm per channel over the spatial positions.
    for (int o = 0; o < b.out_c; ++o) {
      S mean = S(0.0);
      for (int p = 0; p < hw; ++p) mean += z[static_cast<std::size_t>(p) * b.out_c + o];
      mean = mean / S(static_cast<double>(hw));
      S var = S(0.0);
      for (int p = 0; p < hw; ++p) {
        const S dlt = z[static_cast<std::size_t>(p) * b.out_c + o] - mean;
        var += dlt * dlt;
      }
      var = var / S(static_cast<double>(hw));
      const S rstd = S(1.0) / sqrt(var + S(eps));
      c.rstd[o] = rstd;
      const S gamma = params[b.gamma + o];
      const S beta = params[b.beta + o];
      for (int p = 0; p < hw; ++p) {
        const std::size_t idx = static_cast<std::size_t>(p) * b.out_c + o;
        c.xhat[idx] = (z[idx] - mean) * rstd;
        c.affine[idx] = gamma * c.xhat[idx] + beta;
      }
    }

    // ReLU + 2×2 average pool into the next block's input (or the features).
    const int oh = b.in_h / 2;
    const int ow = b.in_w / 2;
    S* next = (l + 1 < net.blocks().size()) ? cache.blocks[l + 1].input.data() : cache.features.data();
    for (int y = 0; y < oh; ++y) {
      for (int x = 0; x < ow; ++x) {
        S* dst = next + (static_cast<std::size_t>(y) * ow + x) * b.out_c;
        for (int o = 0; o < b.out_c; ++o) {
          S acc = S(0.0);
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx) {
              const S a = c.affine[(static_cast<std::size_t>(2 * y + dy) * b.in_w + 2 * x + dx) * b.out_c + o];
              if (!(value_of(a) <= 0.0)) acc += a;  // NaN passes
            }
          dst[o] = acc * S(0.25);
        }
      }
    }
  }

  const int n = net.n_classes();
  const int f = net.feature_dim();
  const S* hw_ = params + net.head_weight();
  const S* hb = params + net.head_bias();
  for (int k = 0; k < n; ++k) cache.logits[k] = hb[k];
  for (int j = 0; j < f; ++j) {
    const S v = cache.features[j];
    const S* row = hw_ + static_cast<std::size_t>(j) * n;
    for (int k = 0; k < n; ++k) cache.logits[k] += v * row[k];
  }
  double m = value_of(cache.logits[0]);
  for (int k = 1; k < n; ++k) m = std::max(m, value_of(cache.logits[k]));
  S sum = S(0.0);
  for (int k = 0; k < n; ++k) sum += exp(cache.logits[k] - S(m));
  const S lse = S(m) + log(sum);
  for (int k = 0; k < n; ++k) cache.log_probs[k] = cache.logits[k] - lse;
}

/// Soft-label cross-entropy of the cached forward pass scaled by `scale`,
/// backpropagated. Parameter gradients are accumulated into d_params; image
/// and label gradients are written (not accumulated) when non-null.
template <class S>
S backward_sample(const ConvNet& net, const S* params, SampleCache<S>& cache, const S* label, S scale, S* d_params,
                  S* d_image, S* d_label) {
  const int n = net.n_classes();
  const int f = net.feature_dim();
  S loss = S(0.0);
  S label_sum = S(0.0);
  for (int k = 0; k < n; ++k) {
    loss -= label[k] * cache.log_probs[k];
    label_sum += label[k];
  }
  if (d_label != nullptr)
    for (int k = 0; k < n; ++k) d_label[k] = -scale * cache.log_probs[k];

  std::vector<S> dlogits(n);
  for (int k = 0; k < n; ++k) dlogits[k] = scale * (exp(cache.log_probs[k]) * label_sum - label[k]);

  S* d_hw = d_params + net.head_weight();
  S* d_hb = d_params + net.head_bias();
  const S* hw_ = params + net.head_weight();
  for (int k = 0; k < n; ++k) d_hb[k] += dlogits[k];
  std::vector<S> d_feat(f);
  for (int j = 0; j < f; ++j) {
    const S v = cache.features[j];
    S* drow = d_hw + static_cast<std::size_t>(j) * n;
    const S* row = hw_ + static_cast<std::size_t>(j) * n;
    S acc = S(0.0);
    for (int k = 0; k < n; ++k) {
      drow[k] += v * dlogits[k];
      acc += row[k] * dlogits[k];
    }
    d_feat[j] = acc;
  }

  std::vector<S> d_out = std::move(d_feat);
  std::vector<S> d_affine, d_z, d_in;
  for (int l = static_cast<int>(net.blocks().size()) - 1; l >= 0; --l) {
    const auto& b = net.blocks()[l];
    auto& c = cache.blocks[l];
    const int hw = b.in_h * b.in_w;
    const int oh = b.in_h / 2;
    const int ow = b.in_w / 2;

    // Pool and ReLU.
    d_affine.assign(static_cast<std::size_t>(hw) * b.out_c, S(0.0));
    for (int y = 0; y < oh; ++y)
      for (int x = 0; x < ow; ++x)
        for (int o = 0; o < b.out_c; ++o) {
          const S g = d_out[(static_cast<std::size_t>(y) * ow + x) * b.out_c + o] * S(0.25);
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx) {
              const std::size_t idx = (static_cast<std::size_t>(2 * y + dy) * b.in_w + 2 * x + dx) * b.out_c + o;
              if (value_of(c.affine[idx]) > 0.0) d_affine[idx] = g;
            }
        }

    // Instance norm with affine parameters.
    d_z.assign(static_cast<std::size_t>(hw) * b.out_c, S(0.0));
    const S inv_n = S(1.0 / hw);
    for (int o = 0; o < b.out_c; ++o) {
      const S gamma = params[b.gamma + o];
      S sum_dy = S(0.0);
      S sum_dy_xhat = S(0.0);
      for (int p = 0; p < hw; ++p) {
        const std::size_t idx = static_cast<std::size_t>(p) * b.out_c + o;
        sum_dy += d_affine[idx];
        sum_dy_xhat += d_affine[idx] * c.xhat[idx];
      }
      d_params[b.beta + o] += sum_dy;
      d_params[b.gamma + o] += sum_dy_xhat;
      // dxhat = γ dy; dz = rstd (dxhat − mean(dxhat) − xhat · mean(dxhat · xhat))
      const S mean_dx = gamma * sum_dy * inv_n;
      const S mean_dx_xhat = gamma * sum_dy_xhat * inv_n;
      const S rstd = c.rstd[o];
      for (int p = 0; p < hw; ++p) {
        const std::size_t idx = static_cast<std::size_t>(p) * b.out_c + o;
        d_z[idx] = rstd * (gamma * d_affine[idx] - mean_dx - c.xhat[idx] * mean_dx_xhat);
      }
    }

    const bool need_input_grad = l > 0 || d_image != nullptr;
    S* d_in_ptr = nullptr;
    if (need_input_grad) {
      d_in.assign(static_cast<std::size_t>(hw) * b.in_c, S(0.0));
      d_in_ptr = d_in.data();
    }
    conv3x3_backward(c.input.data(), b.in_h, b.in_w, b.in_c, b.out_c, params + b.weight, d_z.data(),
                     d_params + b.weight, d_params + b.bias, d_in_ptr);
    if (need_input_grad) std::swap(d_out, d_in);
  }
  if (d_image != nullptr) std::copy(d_out.begin(), d_out.end(), d_image);
  return scale * loss;
}

/// Mean loss over a batch and its gradients.
template <class S>
S batch_loss_grad(const ConvNet& net, std::span<const S> params, std::span<const S> images,
                  std::span<const S> labels, int batch, std::vector<S>& d_params, std::vector<S>* d_images,
                  std::vector<S>* d_labels) {
  const std::size_t img = net.input_size();
  const int n = net.n_classes();
  d_params.assign(net.param_count(), S(0.0));
  if (d_images != nullptr) d_images->assign(img * batch, S(0.0));
  if (d_labels != nullptr) d_labels->assign(static_cast<std::size_t>(n) * batch, S(0.0));
  SampleCache<S> cache(net);
  const S scale = S(1.0 / batch);
  S loss = S(0.0);
  for (int s = 0; s < batch; ++s) {
    forward_sample(net, params.data(), images.data() + s * img, cache);
    loss += backward_sample(net, params.data(), cache, labels.data() + static_cast<std::size_t>(s) * n, scale,
                            d_params.data(), d_images != nullptr ? d_images->data() + s * img : nullptr,
                            d_labels != nullptr ? d_labels->data() + static_cast<std::size_t>(s) * n : nullptr);
  }
  return loss;
}

}  // namespace podd::kernels
