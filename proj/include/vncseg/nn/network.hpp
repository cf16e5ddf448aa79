#pragma once

#include <memory>
#include <string>
#include <vector>

#include "vncseg/nn/layers.hpp"
#include "vncseg/rng.hpp"

namespace vncseg {

struct NetworkConfig {
  int in_channels = 5;
  int n_classes = 8;
  int base_channels = 32;
  int n_down = 3;
  int n_up = 3;
  int n_res_blocks = 6;

  void validate() const {
    if (in_channels < 1 || n_classes < 2 || base_channels < 1 || n_down < 0 ||
        n_up < 0 || n_res_blocks < 0)
      throw std::runtime_error("network config has non-positive fields");
    if (n_down != n_up)
      throw std::runtime_error("n_down (" + std::to_string(n_down) + ") and n_up (" +
                               std::to_string(n_up) + ") must match");
  }

  int downsample_factor() const { return 1 << n_down; }
};

// conv -> batchnorm -> relu
template <typename T>
struct ConvBnRelu {
  Conv2d<T> conv;
  BatchNorm2d<T> bn;
  Tensor<T> pre_relu_cache;

  ConvBnRelu(int in_ch, int out_ch, int ksize, int stride)
      : conv(in_ch, out_ch, ksize, stride, (ksize - 1) / 2), bn(out_ch) {}

  Tensor<T> forward(const Tensor<T>& x, bool train) {
    Tensor<T> h = bn.forward(conv.forward(x, train), train);
    if (train) pre_relu_cache = h;
    return relu(h);
  }

  Tensor<T> backward(const Tensor<T>& gout) {
    return conv.backward(bn.backward(relu_backward(gout, pre_relu_cache)));
  }

  void zero_grad() {
    conv.zero_grad();
    bn.zero_grad();
  }

  void drop_cache() {
    conv.drop_cache();
    bn.drop_cache();
    pre_relu_cache = Tensor<T>();
  }

  void collect(const std::string& prefix, std::vector<ParamRef<T>>& params,
               std::vector<StateRef<T>>& states) {
    conv.collect(prefix + ".conv", params, states);
    bn.collect(prefix + ".bn", params, states);
  }
};

// Slab-to-slice segmentation network: a strided encoder, a residual trunk at
// the coarsest resolution, a nearest-upsampling decoder, and a linear 1x1
// head producing per-class logits at input resolution.
template <typename T>
class Network {
 public:
  explicit Network(const NetworkConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    stem_ = std::make_unique<ConvBnRelu<T>>(cfg_.in_channels, cfg_.base_channels, 7, 1);
    int ch = cfg_.base_channels;
    for (int i = 0; i < cfg_.n_down; ++i) {
      down_.push_back(std::make_unique<ConvBnRelu<T>>(ch, ch * 2, 3, 2));
      ch *= 2;
    }
    for (int i = 0; i < cfg_.n_res_blocks; ++i)
      res_.push_back(std::make_unique<ResidualBlock<T>>(ch));
    for (int i = 0; i < cfg_.n_up; ++i) {
      up_.push_back(std::make_unique<ConvBnRelu<T>>(ch, ch / 2, 3, 1));
      ch /= 2;
    }
    head_ = std::make_unique<Conv2d<T>>(ch, cfg_.n_classes, 1, 1, 0);
  }

  const NetworkConfig& config() const { return cfg_; }

  Tensor<T> forward(const Tensor<T>& x, bool train) {
    if (x.rank != 4)
      throw std::runtime_error("network input must be rank 4, got " + x.shape_str());
    int f = cfg_.downsample_factor();
    if (x.shape[2] % f != 0 || x.shape[3] % f != 0 || x.shape[2] < f || x.shape[3] < f)
      throw std::runtime_error("input " + x.shape_str() + " not divisible by " +
                               std::to_string(f));
    Tensor<T> h = stem_->forward(x, train);
    for (auto& d : down_) h = d->forward(h, train);
    for (auto& r : res_) h = r->forward(h, train);
    for (auto& u : up_) h = u->forward(upsample_nearest2x(h), train);
    return head_->forward(h, train);
  }

  Tensor<T> backward(const Tensor<T>& grad_logits) {
    Tensor<T> g = head_->backward(grad_logits);
    for (auto it = up_.rbegin(); it != up_.rend(); ++it)
      g = upsample_nearest2x_backward((*it)->backward(g));
    for (auto it = res_.rbegin(); it != res_.rend(); ++it) g = (*it)->backward(g);
    for (auto it = down_.rbegin(); it != down_.rend(); ++it) g = (*it)->backward(g);
    return stem_->backward(g);
  }

  void zero_grad() {
    stem_->zero_grad();
    for (auto& d : down_) d->zero_grad();
    for (auto& r : res_) r->zero_grad();
    for (auto& u : up_) u->zero_grad();
    head_->zero_grad();
  }

  void drop_caches() {
    stem_->drop_cache();
    for (auto& d : down_) d->drop_cache();
    for (auto& r : res_) r->drop_cache();
    for (auto& u : up_) u->drop_cache();
    head_->drop_cache();
  }

  std::vector<ParamRef<T>> parameters() {
    std::vector<ParamRef<T>> p;
    std::vector<StateRef<T>> s;
    collect(p, s);
    return p;
  }

  std::vector<StateRef<T>> state() {
    std::vector<ParamRef<T>> p;
    std::vector<StateRef<T>> s;
    collect(p, s);
    return s;
  }

  std::int64_t parameter_count() {
    std::int64_t n = 0;
    for (auto& p : parameters()) n += p.value->numel();
    return n;
  }

  // He-normal conv weights, zero biases, unit gamma, zero beta. Weights are
  // drawn element by element in parameter order from one seeded stream.
  void init_parameters(std::uint64_t seed) {
    Rng rng(seed);
    for (auto& p : parameters()) {
      const std::string& n = p.name;
      bool is_weight = n.size() > 7 && n.compare(n.size() - 7, 7, ".weight") == 0;
      bool is_gamma = n.size() > 6 && n.compare(n.size() - 6, 6, ".gamma") == 0;
      if (is_weight) {
        const auto& sh = p.value->shape;
        double fan_in = static_cast<double>(sh[1]) * sh[2] * sh[3];
        double sd = std::sqrt(2.0 / fan_in);
        for (auto& v : p.value->data) v = static_cast<T>(rng.normal(0.0, sd));
      } else if (is_gamma) {
        p.value->fill(T(1));
      } else {
        p.value->fill(T(0));
      }
    }
    for (auto& s : state()) {
      bool is_var = s.name.size() > 12 &&
                    s.name.compare(s.name.size() - 12, 12, ".running_var") == 0;
      s.value->fill(is_var ? T(1) : T(0));
    }
  }

 private:
  void collect(std::vector<ParamRef<T>>& p, std::vector<StateRef<T>>& s) {
    stem_->collect("stem", p, s);
    for (std::size_t i = 0; i < down_.size(); ++i)
      down_[i]->collect("down" + std::to_string(i), p, s);
    for (std::size_t i = 0; i < res_.size(); ++i)
      res_[i]->collect("res" + std::to_string(i), p, s);
    for (std::size_t i = 0; i < up_.size(); ++i)
      up_[i]->collect("up" + std::to_string(i), p, s);
    head_->collect("head", p, s);
  }

  NetworkConfig cfg_;
  std::unique_ptr<ConvBnRelu<T>> stem_;
  std::vector<std::unique_ptr<ConvBnRelu<T>>> down_;
  std::vector<std::unique_ptr<ResidualBlock<T>>> res_;
  std::vector<std::unique_ptr<ConvBnRelu<T>>> up_;
  std::unique_ptr<Conv2d<T>> head_;
};

}  // namespace vncseg
