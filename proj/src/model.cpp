#include "podd/model.hpp"

#include <cmath>
#include <random>
#include <sstream>

#include "convnet_kernels.hpp"
#include "podd/error.hpp"
#include "podd/rng.hpp"

namespace podd {

ConvNet::ConvNet(ConvNetSpec spec, InputShape input, int n_classes)
    : spec_(spec), input_(input), n_classes_(n_classes) {
  if (spec.depth < 1 || spec.width < 1) throw ConfigError("convnet depth and width must be positive");
  if (!(spec.norm_eps > 0.0)) throw ConfigError("instance norm epsilon must be positive");
  if (input.height < 1 || input.width < 1 || input.channels < 1) throw ConfigError("input shape must be positive");
  if (n_classes < 1) throw ConfigError("convnet needs at least one class");
  const int div = 1 << spec.depth;
  if (input.height % div != 0 || input.width % div != 0) {
    std::ostringstream msg;
    msg << "input " << input.height << "x" << input.width << " is not divisible by 2^" << spec.depth;
    throw ConfigError(msg.str());
  }
  std::size_t off = 0;
  int h = input.height;
  int w = input.width;
  int c = input.channels;
  for (int l = 0; l < spec.depth; ++l) {
    Block b{h, w, c, spec.width, 0, 0, 0, 0};
    b.weight = off;
    off += static_cast<std::size_t>(9) * c * spec.width;
    b.bias = off;
    off += spec.width;
    b.gamma = off;
    off += spec.width;
    b.beta = off;
    off += spec.width;
    blocks_.push_back(b);
    h /= 2;
    w /= 2;
    c = spec.width;
  }
  feature_dim_ = h * w * c;
  head_weight_ = off;
  off += static_cast<std::size_t>(feature_dim_) * n_classes;
  head_bias_ = off;
  off += n_classes;
  param_count_ = off;
}

std::size_t convnet_param_count(ConvNetSpec spec, InputShape input, int n_classes) {
  std::size_t total = 0;
  int in_c = input.channels;
  for (int l = 0; l < spec.depth; ++l) {
    total += 3 * 3 * in_c * spec.width + spec.width;  // conv
    total += 2 * spec.width;                          // norm affine
    in_c = spec.width;
  }
  const std::size_t spatial = static_cast<std::size_t>(input.height >> spec.depth) * (input.width >> spec.depth);
  total += spatial * spec.width * n_classes + n_classes;
  return total;
}

ModelState init_model(ConvNetSpec spec, InputShape input, int n_classes, std::uint64_t seed) {
  ConvNet net(spec, input, n_classes);
  std::vector<double> params(net.param_count(), 0.0);
  Rng rng(derive_seed(seed, {tag(SeedTag::kModelInit)}));
  auto fill_uniform = [&](std::size_t off, std::size_t count, double fan_in) {
    std::uniform_real_distribution<double> dist(-1.0 / std::sqrt(fan_in), 1.0 / std::sqrt(fan_in));
    for (std::size_t i = 0; i < count; ++i) params[off + i] = dist(rng);
  };
  for (const auto& b : net.blocks()) {
    const double fan_in = 9.0 * b.in_c;
    fill_uniform(b.weight, static_cast<std::size_t>(9) * b.in_c * b.out_c, fan_in);
    fill_uniform(b.bias, b.out_c, fan_in);
    for (int o = 0; o < b.out_c; ++o) params[b.gamma + o] = 1.0;
  }
  fill_uniform(net.head_weight(), static_cast<std::size_t>(net.feature_dim()) * n_classes, net.feature_dim());
  fill_uniform(net.head_bias(), n_classes, net.feature_dim());
  return {std::move(net), std::move(params), seed};
}

namespace {

void check_batch(const ConvNet& net, std::span<const double> params, std::size_t images, int batch) {
  if (params.size() != net.param_count()) throw ConfigError("parameter vector does not match the network");
  if (batch < 0 || images != net.input_size() * static_cast<std::size_t>(batch)) {
    throw ConfigError("image batch does not match the network input shape");
  }
}

}  // namespace

std::vector<double> forward(const ConvNet& net, std::span<const double> params, std::span<const double> images,
                            int batch) {
  check_batch(net, params, images.size(), batch);
  kernels::SampleCache<double> cache(net);
  const int n = net.n_classes();
  std::vector<double> logits(static_cast<std::size_t>(batch) * n);
  for (int s = 0; s < batch; ++s) {
    kernels::forward_sample(net, params.data(), images.data() + s * net.input_size(), cache);
    std::copy(cache.logits.begin(), cache.logits.end(), logits.begin() + static_cast<std::ptrdiff_t>(s) * n);
  }
  return logits;
}

std::vector<double> forward(const ModelState& model, const ImageBatch& images) {
  const auto& in = model.net.input();
  if (images.height != in.height || images.width != in.width || images.channels != in.channels) {
    throw ConfigError("image shape does not match the model input");
  }
  return forward(model.net, model.params, images.data, images.count);
}

double soft_cross_entropy(std::span<const double> logits, std::span<const double> label) {
  double m = logits[0];
  for (double l : logits) m = std::max(m, l);
  double sum = 0.0;
  for (double l : logits) sum += std::exp(l - m);
  const double lse = m + std::log(sum);
  double loss = 0.0;
  for (std::size_t k = 0; k < logits.size(); ++k) loss -= label[k] * (logits[k] - lse);
  return loss;
}

LossGrad loss_and_gradient(const ConvNet& net, std::span<const double> params, std::span<const double> images,
                           std::span<const double> labels, int batch, GradRequest request) {
  check_batch(net, params, images.size(), batch);
  if (labels.size() != static_cast<std::size_t>(batch) * net.n_classes()) throw ConfigError("label batch has the wrong size");
  LossGrad out;
  out.loss = kernels::batch_loss_grad<double>(net, params, images, labels, batch, out.params,
                                              request.images ? &out.images : nullptr,
                                              request.labels ? &out.labels : nullptr);
  return out;
}

InnerHvp inner_loss_hvp(const ConvNet& net, std::span<const double> params, std::span<const double> direction,
                        std::span<const double> images, std::span<const double> labels, int batch) {
  check_batch(net, params, images.size(), batch);
  if (direction.size() != params.size()) throw ConfigError("direction does not match the parameter vector");
  std::vector<Dual> p(params.size());
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = Dual(params[i], direction[i]);
  const std::vector<Dual> x(images.begin(), images.end());
  const std::vector<Dual> y(labels.begin(), labels.end());
  std::vector<Dual> dp, dx, dy;
  const Dual loss = kernels::batch_loss_grad<Dual>(net, p, x, y, batch, dp, &dx, &dy);

  InnerHvp out;
  out.loss = loss.v;
  auto tangents = [](const std::vector<Dual>& v) {
    std::vector<double> t(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) t[i] = v[i].d;
    return t;
  };
  out.params = tangents(dp);
  out.images = tangents(dx);
  out.labels = tangents(dy);
  return out;
}

double sgd_step_in_place(const ConvNet& net, std::vector<double>& params, std::span<const double> images,
                         std::span<const double> labels, int batch, double lr) {
  const auto g = loss_and_gradient(net, params, images, labels, batch);
  if (!std::isfinite(g.loss)) {
    throw RuntimeFailure("non-finite inner training loss (" + std::to_string(g.loss) + ")");
  }
  for (std::size_t i = 0; i < params.size(); ++i) params[i] -= lr * g.params[i];
  return g.loss;
}

ModelState sgd_step(const ModelState& model, const ImageBatch& batch, std::span<const double> labels, double lr) {
  ModelState next = model;
  sgd_step_in_place(next.net, next.params, batch.data, labels, batch.count, lr);
  return next;
}

double accuracy(const ConvNet& net, std::span<const double> params, const ImageBatch& images,
                std::span<const int> labels) {
  if (images.count == 0) return 0.0;
  const int n = net.n_classes();
  const auto logits = forward(net, params, images.data, images.count);
  int correct = 0;
  for (int s = 0; s < images.count; ++s) {
    const double* row = logits.data() + static_cast<std::size_t>(s) * n;
    const int pred = static_cast<int>(std::max_element(row, row + n) - row);
    if (pred == labels[s]) ++correct;
  }
  return static_cast<double>(correct) / images.count;
}

std::vector<double> one_hot(std::span<const int> labels, int n) {
  std::vector<double> out(labels.size() * n, 0.0);
  for (std::size_t i = 0; i < labels.size(); ++i) out[i * n + labels[i]] = 1.0;
  return out;
}

}  // namespace podd
