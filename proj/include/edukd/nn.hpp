#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "edukd/tensor.hpp"

namespace edukd {

template <typename S>
struct ParamRef {
  std::string name;
  TensorT<S>* value;
  TensorT<S>* grad;
};

template <typename S>
struct BufferRef {
  std::string name;
  TensorT<S>* value;
};

// Layers cache whatever their backward pass needs during forward, so a
// layer instance is owned by exactly one training loop at a time.
template <typename S>
class Layer {
public:
  virtual ~Layer() = default;
  virtual TensorT<S> forward(const TensorT<S>& x, bool training) = 0;
  virtual TensorT<S> backward(const TensorT<S>& grad_out) = 0;
  virtual void init_params(RngStream&) {}
  virtual void collect_params(const std::string& prefix,
                              std::vector<ParamRef<S>>& out) {
    (void)prefix;
    (void)out;
  }
  virtual void collect_buffers(const std::string& prefix,
                               std::vector<BufferRef<S>>& out) {
    (void)prefix;
    (void)out;
  }
  virtual void fingerprint(std::vector<std::string>& out) const = 0;
};

inline int conv_out_dim(int in, int k, int stride, int pad) {
  int out = (in + 2 * pad - k) / stride + 1;
  if (out <= 0)
    fail_run("spatial dim collapses to ", out, " (in=", in, " k=", k,
             " stride=", stride, " pad=", pad, ")");
  return out;
}

template <typename S>
class Conv2d : public Layer<S> {
public:
  Conv2d(int in_c, int out_c, int k, int stride, int pad, bool bias)
      : in_c_(in_c), out_c_(out_c), k_(k), stride_(stride), pad_(pad),
        has_bias_(bias), weight_({out_c, in_c, k, k}),
        grad_weight_({out_c, in_c, k, k}) {
    if (has_bias_) {
      bias_ = TensorT<S>({out_c});
      grad_bias_ = TensorT<S>({out_c});
    }
  }

  TensorT<S> forward(const TensorT<S>& x, bool) override {
    const int n = x.dim(0), h = x.dim(2), w = x.dim(3);
    if (x.dim(1) != in_c_)
      fail_run("conv2d expects ", in_c_, " input channels, got ", x.dim(1));
    const int ho = conv_out_dim(h, k_, stride_, pad_);
    const int wo = conv_out_dim(w, k_, stride_, pad_);
    const int hw = ho * wo;
    const int krows = in_c_ * k_ * k_;

    in_shape_ = x.shape;
    cols_ = TensorT<S>({krows, n * hw});
    im2col(x, ho, wo);

    TensorT<S> y({n, out_c_, ho, wo});
    auto wm = as_matrix(weight_, out_c_, krows);
    auto cm = as_matrix(cols_, krows, n * hw);
    EigenMatrix<S> prod = wm * cm;
    for (int i = 0; i < n; ++i) {
      Eigen::Map<EigenMatrix<S>> yb(y.data.data() +
                                        std::size_t(i) * out_c_ * hw,
                                    out_c_, hw);
      yb = prod.middleCols(i * hw, hw);
      if (has_bias_)
        for (int c = 0; c < out_c_; ++c) yb.row(c).array() += bias_.data[c];
    }
    return y;
  }

  TensorT<S> backward(const TensorT<S>& grad_out) override {
    const int n = grad_out.dim(0), ho = grad_out.dim(2), wo = grad_out.dim(3);
    const int hw = ho * wo;
    const int krows = in_c_ * k_ * k_;

    TensorT<S> dy({out_c_, n * hw});
    for (int i = 0; i < n; ++i) {
      Eigen::Map<const EigenMatrix<S>> gb(
          grad_out.data.data() + std::size_t(i) * out_c_ * hw, out_c_, hw);
      as_matrix(dy, out_c_, n * hw).middleCols(i * hw, hw) = gb;
    }
    auto dym = as_matrix(dy, out_c_, n * hw);
    auto cm = as_matrix(cols_, krows, n * hw);
    as_matrix(grad_weight_, out_c_, krows).noalias() += dym * cm.transpose();
    if (has_bias_) {
      for (int c = 0; c < out_c_; ++c)
        grad_bias_.data[c] += dym.row(c).sum();
    }

    TensorT<S> dcols({krows, n * hw});
    as_matrix(dcols, krows, n * hw).noalias() =
        as_matrix(weight_, out_c_, krows).transpose() * dym;

    TensorT<S> dx(in_shape_);
    col2im(dcols, dx, ho, wo);
    return dx;
  }

  void init_params(RngStream& rng) override {
    const S std = static_cast<S>(
        std::sqrt(2.0 / (double(in_c_) * k_ * k_)));
    weight_.fill_normal(rng, S(0), std);
    if (has_bias_) bias_.fill(S(0));
  }

  void collect_params(const std::string& prefix,
                      std::vector<ParamRef<S>>& out) override {
    out.push_back({prefix + "weight", &weight_, &grad_weight_});
    if (has_bias_) out.push_back({prefix + "bias", &bias_, &grad_bias_});
  }

  void fingerprint(std::vector<std::string>& out) const override {
    out.push_back(concat("conv2d in=", in_c_, " out=", out_c_, " k=", k_,
                         " stride=", stride_, " pad=", pad_,
                         " bias=", int(has_bias_)));
  }

private:
  void im2col(const TensorT<S>& x, int ho, int wo) {
    const int n = x.dim(0), h = x.dim(2), w = x.dim(3);
    const int hw = ho * wo;
    for (int i = 0; i < n; ++i) {
      const S* xp = x.data.data() + std::size_t(i) * in_c_ * h * w;
      for (int c = 0; c < in_c_; ++c)
        for (int kh = 0; kh < k_; ++kh)
          for (int kw = 0; kw < k_; ++kw) {
            const int row = (c * k_ + kh) * k_ + kw;
            S* dst = cols_.data.data() +
                     std::size_t(row) * (std::size_t(n) * hw) +
                     std::size_t(i) * hw;
            for (int oh = 0; oh < ho; ++oh) {
              const int ih = oh * stride_ - pad_ + kh;
              for (int ow = 0; ow < wo; ++ow) {
                const int iw = ow * stride_ - pad_ + kw;
                dst[oh * wo + ow] =
                    (ih >= 0 && ih < h && iw >= 0 && iw < w)
                        ? xp[(c * h + ih) * w + iw]
                        : S(0);
              }
            }
          }
    }
  }

  void col2im(const TensorT<S>& dcols, TensorT<S>& dx, int ho, int wo) {
    const int n = dx.dim(0), h = dx.dim(2), w = dx.dim(3);
    const int hw = ho * wo;
    for (int i = 0; i < n; ++i) {
      S* xp = dx.data.data() + std::size_t(i) * in_c_ * h * w;
      for (int c = 0; c < in_c_; ++c)
        for (int kh = 0; kh < k_; ++kh)
          for (int kw = 0; kw < k_; ++kw) {
            const int row = (c * k_ + kh) * k_ + kw;
            const S* src = dcols.data.data() +
                           std::size_t(row) * (std::size_t(n) * hw) +
                           std::size_t(i) * hw;
            for (int oh = 0; oh < ho; ++oh) {
              const int ih = oh * stride_ - pad_ + kh;
              if (ih < 0 || ih >= h) continue;
              for (int ow = 0; ow < wo; ++ow) {
                const int iw = ow * stride_ - pad_ + kw;
                if (iw < 0 || iw >= w) continue;
                xp[(c * h + ih) * w + iw] += src[oh * wo + ow];
              }
            }
          }
    }
  }

  int in_c_, out_c_, k_, stride_, pad_;
  bool has_bias_;
  TensorT<S> weight_, grad_weight_, bias_, grad_bias_;
  TensorT<S> cols_;
  std::vector<int> in_shape_;
};

// One filter per channel (groups == channels).
template <typename S>
class DepthwiseConv2d : public Layer<S> {
public:
  DepthwiseConv2d(int channels, int k, int stride, int pad)
      : c_(channels), k_(k), stride_(stride), pad_(pad),
        weight_({channels, 1, k, k}), grad_weight_({channels, 1, k, k}) {}

  TensorT<S> forward(const TensorT<S>& x, bool) override {
    if (x.dim(1) != c_)
      fail_run("dwconv expects ", c_, " channels, got ", x.dim(1));
    const int n = x.dim(0), h = x.dim(2), w = x.dim(3);
    const int ho = conv_out_dim(h, k_, stride_, pad_);
    const int wo = conv_out_dim(w, k_, stride_, pad_);
    input_ = x;
    TensorT<S> y({n, c_, ho, wo});
    for (int i = 0; i < n; ++i)
      for (int c = 0; c < c_; ++c) {
        const S* xp = x.data.data() + (std::size_t(i) * c_ + c) * h * w;
        const S* wp = weight_.data.data() + std::size_t(c) * k_ * k_;
        S* yp = y.data.data() + (std::size_t(i) * c_ + c) * ho * wo;
        for (int oh = 0; oh < ho; ++oh)
          for (int ow = 0; ow < wo; ++ow) {
            S acc = 0;
            for (int kh = 0; kh < k_; ++kh) {
              const int ih = oh * stride_ - pad_ + kh;
              if (ih < 0 || ih >= h) continue;
              for (int kw = 0; kw < k_; ++kw) {
                const int iw = ow * stride_ - pad_ + kw;
                if (iw < 0 || iw >= w) continue;
                acc += xp[ih * w + iw] * wp[kh * k_ + kw];
              }
            }
            yp[oh * wo + ow] = acc;
          }
      }
    return y;
  }

  TensorT<S> backward(const TensorT<S>& grad_out) override {
    const int n = input_.dim(0), h = input_.dim(2), w = input_.dim(3);
    const int ho = grad_out.dim(2), wo = grad_out.dim(3);
    TensorT<S> dx(input_.shape);
    for (int i = 0; i < n; ++i)
      for (int c = 0; c < c_; ++c) {
        const S* xp = input_.data.data() + (std::size_t(i) * c_ + c) * h * w;
        const S* gp = grad_out.data.data() + (std::size_t(i) * c_ + c) * ho * wo;
        S* dxp = dx.data.data() + (std::size_t(i) * c_ + c) * h * w;
        S* dwp = grad_weight_.data.data() + std::size_t(c) * k_ * k_;
        const S* wp = weight_.data.data() + std::size_t(c) * k_ * k_;
        for (int oh = 0; oh < ho; ++oh)
          for (int ow = 0; ow < wo; ++ow) {
            const S g = gp[oh * wo + ow];
            for (int kh = 0; kh < k_; ++kh) {
              const int ih = oh * stride_ - pad_ + kh;
              if (ih < 0 || ih >= h) continue;
              for (int kw = 0; kw < k_; ++kw) {
                const int iw = ow * stride_ - pad_ + kw;
                if (iw < 0 || iw >= w) continue;
                dwp[kh * k_ + kw] += g * xp[ih * w + iw];
                dxp[ih * w + iw] += g * wp[kh * k_ + kw];
              }
            }
          }
      }
    return dx;
  }

  void init_params(RngStream& rng) override {
    const S std = static_cast<S>(std::sqrt(2.0 / (double(k_) * k_)));
    weight_.fill_normal(rng, S(0), std);
  }

  void collect_params(const std::string& prefix,
                      std::vector<ParamRef<S>>& out) override {
    out.push_back({prefix + "weight", &weight_, &grad_weight_});
  }

  void fingerprint(std::vector<std::string>& out) const override {
    out.push_back(concat("dwconv2d c=", c_, " k=", k_, " stride=", stride_,
                         " pad=", pad_));
  }

private:
  int c_, k_, stride_, pad_;
  TensorT<S> weight_, grad_weight_;
  TensorT<S> input_;
};

template <typename S>
class BatchNorm2d : public Layer<S> {
public:
  explicit BatchNorm2d(int channels, double momentum = 0.1,
                       double eps = 1e-5)
      : c_(channels), momentum_(momentum), eps_(eps), gamma_({channels}),
        beta_({channels}), grad_gamma_({channels}), grad_beta_({channels}),
        running_mean_({channels}), running_var_({channels}) {
    gamma_.fill(S(1));
    running_var_.fill(S(1));
  }

  TensorT<S> forward(const TensorT<S>& x, bool training) override {
    if (x.dim(1) != c_)
      fail_run("batchnorm expects ", c_, " channels, got ", x.dim(1));
    const int n = x.dim(0), h = x.dim(2), w = x.dim(3);
    const std::size_t per = std::size_t(h) * w;
    const double count = double(n) * per;
    train_mode_ = training;
    input_ = x;
    xhat_ = TensorT<S>(x.shape);
    invstd_ = TensorT<S>({c_});
    mean_ = TensorT<S>({c_});
    TensorT<S> y(x.shape);

    for (int c = 0; c < c_; ++c) {
      double mean, var;
      if (training) {
        double sum = 0, sq = 0;
        for (int i = 0; i < n; ++i) {
          const S* xp = x.data.data() + (std::size_t(i) * c_ + c) * per;
          for (std::size_t j = 0; j < per; ++j) {
            sum += xp[j];
            sq += double(xp[j]) * xp[j];
          }
        }
        mean = sum / count;
        var = sq / count - mean * mean;
        if (var < 0) var = 0;
        const double unbiased =
            count > 1 ? var * count / (count - 1) : var;
        running_mean_.data[c] = static_cast<S>(
            (1 - momentum_) * running_mean_.data[c] + momentum_ * mean);
        running_var_.data[c] = static_cast<S>(
            (1 - momentum_) * running_var_.data[c] + momentum_ * unbiased);
      } else {
        mean = running_mean_.data[c];
        var = running_var_.data[c];
      }
      const S istd = static_cast<S>(1.0 / std::sqrt(var + eps_));
      mean_.data[c] = static_cast<S>(mean);
      invstd_.data[c] = istd;
      const S g = gamma_.data[c], b = beta_.data[c];
      for (int i = 0; i < n; ++i) {
        const S* xp = x.data.data() + (std::size_t(i) * c_ + c) * per;
        S* hp = xhat_.data.data() + (std::size_t(i) * c_ + c) * per;
        S* yp = y.data.data() + (std::size_t(i) * c_ + c) * per;
        for (std::size_t j = 0; j < per; ++j) {
          hp[j] = (xp[j] - static_cast<S>(mean)) * istd;
          yp[j] = g * hp[j] + b;
        }
      }
    }
    return y;
  }

  TensorT<S> backward(const TensorT<S>& grad_out) override {
    const int n = grad_out.dim(0), h = grad_out.dim(2), w = grad_out.dim(3);
    const std::size_t per = std::size_t(h) * w;
    const double count = double(n) * per;
    TensorT<S> dx(grad_out.shape);

    for (int c = 0; c < c_; ++c) {
      double sum_dy = 0, sum_dy_xhat = 0;
      for (int i = 0; i < n; ++i) {
        const S* gp = grad_out.data.data() + (std::size_t(i) * c_ + c) * per;
        const S* hp = xhat_.data.data() + (std::size_t(i) * c_ + c) * per;
        for (std::size_t j = 0; j < per; ++j) {
          sum_dy += gp[j];
          sum_dy_xhat += double(gp[j]) * hp[j];
        }
      }
      grad_gamma_.data[c] += static_cast<S>(sum_dy_xhat);
      grad_beta_.data[c] += static_cast<S>(sum_dy);
      const S g = gamma_.data[c], istd = invstd_.data[c];
      for (int i = 0; i < n; ++i) {
        const S* gp = grad_out.data.data() + (std::size_t(i) * c_ + c) * per;
        const S* hp = xhat_.data.data() + (std::size_t(i) * c_ + c) * per;
        S* dp = dx.data.data() + (std::size_t(i) * c_ + c) * per;
        if (train_mode_) {
          for (std::size_t j = 0; j < per; ++j)
            dp[j] = static_cast<S>(
                double(g) * istd *
                (double(gp[j]) - sum_dy / count -
                 double(hp[j]) * sum_dy_xhat / count));
        } else {
          // running statistics are constants in eval mode
          for (std::size_t j = 0; j < per; ++j)
            dp[j] = g * istd * gp[j];
        }
      }
    }
    return dx;
  }

  void collect_params(const std::string& prefix,
                      std::vector<ParamRef<S>>& out) override {
    out.push_back({prefix + "gamma", &gamma_, &grad_gamma_});
    out.push_back({prefix + "beta", &beta_, &grad_beta_});
  }

  void collect_buffers(const std::string& prefix,
                       std::vector<BufferRef<S>>& out) override {
    out.push_back({prefix + "running_mean", &running_mean_});
    out.push_back({prefix + "running_var", &running_var_});
  }

  void fingerprint(std::vector<std::string>& out) const override {
    out.push_back(concat("batchnorm2d c=", c_));
  }

private:
  int c_;
  double momentum_, eps_;
  bool train_mode_ = true;
  TensorT<S> gamma_, beta_, grad_gamma_, grad_beta_;
  TensorT<S> running_mean_, running_var_;
  TensorT<S> input_, xhat_, invstd_, mean_;
};

template <typename S>
class ReLU : public Layer<S> {
public:
  TensorT<S> forward(const TensorT<S>& x, bool) override {
    mask_.assign(x.numel(), 0);
    TensorT<S> y(x.shape);
    for (std::size_t i = 0; i < x.numel(); ++i) {
      if (x.data[i] > 0) {
        y.data[i] = x.data[i];
        mask_[i] = 1;
      }
    }
    return y;
  }

  TensorT<S> backward(const TensorT<S>& grad_out) override {
    TensorT<S> dx(grad_out.shape);
    for (std::size_t i = 0; i < grad_out.numel(); ++i)
      dx.data[i] = mask_[i] ? grad_out.data[i] : S(0);
    return dx;
  }

  void fingerprint(std::vector<std::string>& out) const override {
    out.push_back("relu");
  }

private:
  std::vector<char> mask_;
};

template <typename S>
class MaxPool2d : public Layer<S> {
public:
  MaxPool2d(int k, int stride) : k_(k), stride_(stride) {}

  TensorT<S> forward(const TensorT<S>& x, bool) override {
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const int ho = (h - k_) / stride_ + 1;
    const int wo = (w - k_) / stride_ + 1;
    if (ho <= 0 || wo <= 0)
      fail_run("maxpool output collapses (h=", h, " w=", w, " k=", k_, ")");
    in_shape_ = x.shape;
    TensorT<S> y({n, c, ho, wo});
    argmax_.assign(y.numel(), 0);
    std::size_t oi = 0;
    for (int i = 0; i < n; ++i)
      for (int ch = 0; ch < c; ++ch) {
        const S* xp = x.data.data() + (std::size_t(i) * c + ch) * h * w;
        const std::size_t base = (std::size_t(i) * c + ch) * h * w;
        for (int oh = 0; oh < ho; ++oh)
          for (int ow = 0; ow < wo; ++ow, ++oi) {
            S best = xp[(oh * stride_) * w + ow * stride_];
            std::size_t besti = base + (oh * stride_) * w + ow * stride_;
            for (int kh = 0; kh < k_; ++kh)
              for (int kw = 0; kw < k_; ++kw) {
                const int ih = oh * stride_ + kh, iw = ow * stride_ + kw;
                const S v = xp[ih * w + iw];
                if (v > best) {
                  best = v;
                  besti = base + std::size_t(ih) * w + iw;
                }
              }
            y.data[oi] = best;
            argmax_[oi] = besti;
          }
      }
    return y;
  }

  TensorT<S> backward(const TensorT<S>& grad_out) override {
    TensorT<S> dx(in_shape_);
    for (std::size_t i = 0; i < grad_out.numel(); ++i)
      dx.data[argmax_[i]] += grad_out.data[i];
    return dx;
  }

  void fingerprint(std::vector<std::string>& out) const override {
    out.push_back(concat("maxpool2d k=", k_, " stride=", stride_));
  }

private:
  int k_, stride_;
  std::vector<int> in_shape_;
  std::vector<std::size_t> argmax_;
};

// Adaptive average pool with fixed 1x1 output.
template <typename S>
class GlobalAvgPool : public Layer<S> {
public:
  TensorT<S> forward(const TensorT<S>& x, bool) override {
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    in_shape_ = x.shape;
    TensorT<S> y({n, c, 1, 1});
    const std::size_t per = std::size_t(h) * w;
    for (int i = 0; i < n; ++i)
      for (int ch = 0; ch < c; ++ch) {
        const S* xp = x.data.data() + (std::size_t(i) * c + ch) * per;
        double acc = 0;
        for (std::size_t j = 0; j < per; ++j) acc += xp[j];
        y.data[std::size_t(i) * c + ch] = static_cast<S>(acc / double(per));
      }
    return y;
  }

  TensorT<S> backward(const TensorT<S>& grad_out) override {
    TensorT<S> dx(in_shape_);
    const int n = in_shape_[0], c = in_shape_[1];
    const std::size_t per = std::size_t(in_shape_[2]) * in_shape_[3];
    for (int i = 0; i < n; ++i)
      for (int ch = 0; ch < c; ++ch) {
        const S g = grad_out.data[std::size_t(i) * c + ch] /
                    static_cast<S>(per);
        S* dp = dx.data.data() + (std::size_t(i) * c + ch) * per;
        for (std::size_t j = 0; j < per; ++j) dp[j] = g;
      }
    return dx;
  }

  void fingerprint(std::vector<std::string>& out) const override {
    out.push_back("adaptive_avg_pool out=1x1");
  }

private:
  std::vector<int> in_shape_;
};

template <typename S>
class Flatten : public Layer<S> {
public:
  TensorT<S> forward(const TensorT<S>& x, bool) override {
    in_shape_ = x.shape;
    TensorT<S> y;
    y.shape = {x.dim(0), static_cast<int>(x.numel()) / x.dim(0)};
    y.data = x.data;
    return y;
  }

  TensorT<S> backward(const TensorT<S>& grad_out) override {
    TensorT<S> dx;
    dx.shape = in_shape_;
    dx.data = grad_out.data;
    return dx;
  }

  void fingerprint(std::vector<std::string>& out) const override {
    out.push_back("flatten");
  }

private:
  std::vector<int> in_shape_;
};

template <typename S>
class Linear : public Layer<S> {
public:
  Linear(int in_f, int out_f, bool bias = true)
      : in_f_(in_f), out_f_(out_f), has_bias_(bias), weight_({out_f, in_f}),
        grad_weight_({out_f, in_f}) {
    if (has_bias_) {
      bias_ = TensorT<S>({out_f});
      grad_bias_ = TensorT<S>({out_f});
    }
  }

  TensorT<S> forward(const TensorT<S>& x, bool) override {
    if (x.dim(1) != in_f_)
      fail_run("linear expects ", in_f_, " features, got ", x.dim(1));
    const int n = x.dim(0);
    input_ = x;
    TensorT<S> y({n, out_f_});
    as_matrix(y, n, out_f_).noalias() =
        as_matrix(x, n, in_f_) * as_matrix(weight_, out_f_, in_f_).transpose();
    if (has_bias_)
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < out_f_; ++j)
          y.data[std::size_t(i) * out_f_ + j] += bias_.data[j];
    return y;
  }

  TensorT<S> backward(const TensorT<S>& grad_out) override {
    const int n = grad_out.dim(0);
    auto gm = as_matrix(grad_out, n, out_f_);
    as_matrix(grad_weight_, out_f_, in_f_).noalias() +=
        gm.transpose() * as_matrix(input_, n, in_f_);
    if (has_bias_)
      for (int j = 0; j < out_f_; ++j)
        grad_bias_.data[j] += gm.col(j).sum();
    TensorT<S> dx({n, in_f_});
    as_matrix(dx, n, in_f_).noalias() =
        gm * as_matrix(weight_, out_f_, in_f_);
    return dx;
  }

  void init_params(RngStream& rng) override {
    const S std = static_cast<S>(std::sqrt(2.0 / double(in_f_)));
    weight_.fill_normal(rng, S(0), std);
    if (has_bias_) bias_.fill(S(0));
  }

  void collect_params(const std::string& prefix,
                      std::vector<ParamRef<S>>& out) override {
    out.push_back({prefix + "weight", &weight_, &grad_weight_});
    if (has_bias_) out.push_back({prefix + "bias", &bias_, &grad_bias_});
  }

  void fingerprint(std::vector<std::string>& out) const override {
    out.push_back(concat("linear in=", in_f_, " out=", out_f_,
                         " bias=", int(has_bias_)));
  }

private:
  int in_f_, out_f_;
  bool has_bias_;
  TensorT<S> weight_, grad_weight_, bias_, grad_bias_;
  TensorT<S> input_;
};

// Ordered container of named children. A child marked frozen runs in
// inference mode even while the rest of the net trains.
template <typename S>
class Sequential : public Layer<S> {
public:
  Sequential() = default;

  Sequential& add(std::string name, std::unique_ptr<Layer<S>> layer) {
    for (const auto& c : children_)
      if (c.name == name) fail_run("duplicate child name '", name, "'");
    children_.push_back({std::move(name), std::move(layer), false});
    return *this;
  }

  std::size_t size() const { return children_.size(); }

  Layer<S>& child(std::size_t i) { return *children_[i].layer; }
  const std::string& child_name(std::size_t i) const {
    return children_[i].name;
  }

  Layer<S>* find(const std::string& name) {
    for (auto& c : children_)
      if (c.name == name) return c.layer.get();
    return nullptr;
  }

  void set_frozen(const std::string& name, bool frozen) {
    for (auto& c : children_)
      if (c.name == name) {
        c.frozen = frozen;
        return;
      }
    fail_run("no child named '", name, "'");
  }

  bool is_frozen(const std::string& name) const {
    for (const auto& c : children_)
      if (c.name == name) return c.frozen;
    fail_run("no child named '", name, "'");
  }

  TensorT<S> forward(const TensorT<S>& x, bool training) override {
    TensorT<S> cur = x;
    for (auto& c : children_)
      cur = c.layer->forward(cur, training && !c.frozen);
    return cur;
  }

  TensorT<S> backward(const TensorT<S>& grad_out) override {
    return backward_from(grad_out, 0);
  }

  // Propagates gradient down to child index `stop` (inclusive); layers
  // below it are all frozen and need no gradient.
  TensorT<S> backward_from(const TensorT<S>& grad_out, std::size_t stop) {
    TensorT<S> cur = grad_out;
    for (std::size_t i = children_.size(); i-- > stop;)
      cur = children_[i].layer->backward(cur);
    return cur;
  }

  void init_params(RngStream& rng) override {
    for (auto& c : children_) c.layer->init_params(rng);
  }

  void collect_params(const std::string& prefix,
                      std::vector<ParamRef<S>>& out) override {
    for (auto& c : children_)
      c.layer->collect_params(prefix + c.name + ".", out);
  }

  void collect_buffers(const std::string& prefix,
                       std::vector<BufferRef<S>>& out) override {
    for (auto& c : children_)
      c.layer->collect_buffers(prefix + c.name + ".", out);
  }

  void fingerprint(std::vector<std::string>& out) const override {
    for (const auto& c : children_) c.layer->fingerprint(out);
  }

private:
  struct Child {
    std::string name;
    std::unique_ptr<Layer<S>> layer;
    bool frozen;
  };
  std::vector<Child> children_;
};

// Main path plus skip connection. Covers residual blocks (relu after the
// join) and inverted-bottleneck blocks (linear join). An empty projection
// means identity skip.
template <typename S>
class SkipBlock : public Layer<S> {
public:
  SkipBlock(std::unique_ptr<Sequential<S>> main,
            std::unique_ptr<Sequential<S>> projection, bool relu_after_add)
      : main_(std::move(main)), proj_(std::move(projection)),
        relu_after_add_(relu_after_add) {}

  TensorT<S> forward(const TensorT<S>& x, bool training) override {
    TensorT<S> ym = main_->forward(x, training);
    TensorT<S> ys = proj_ ? proj_->forward(x, training) : x;
    if (!ym.same_shape(ys))
      fail_run("skip join shape mismatch ", ym.shape_str(), " vs ",
               ys.shape_str());
    TensorT<S> y(ym.shape);
    mask_.assign(y.numel(), 1);
    for (std::size_t i = 0; i < y.numel(); ++i) {
      S v = ym.data[i] + ys.data[i];
      if (relu_after_add_ && v <= 0) {
        v = 0;
        mask_[i] = 0;
      }
      y.data[i] = v;
    }
    return y;
  }

  TensorT<S> backward(const TensorT<S>& grad_out) override {
    TensorT<S> dsum(grad_out.shape);
    for (std::size_t i = 0; i < grad_out.numel(); ++i)
      dsum.data[i] = (relu_after_add_ && !mask_[i]) ? S(0) : grad_out.data[i];
    TensorT<S> dx = main_->backward(dsum);
    if (proj_) {
      TensorT<S> dskip = proj_->backward(dsum);
      for (std::size_t i = 0; i < dx.numel(); ++i)
        dx.data[i] += dskip.data[i];
    } else {
      for (std::size_t i = 0; i < dx.numel(); ++i)
        dx.data[i] += dsum.data[i];
    }
    return dx;
  }

  void init_params(RngStream& rng) override {
    main_->init_params(rng);
    if (proj_) proj_->init_params(rng);
  }

  void collect_params(const std::string& prefix,
                      std::vector<ParamRef<S>>& out) override {
    main_->collect_params(prefix, out);
    if (proj_) proj_->collect_params(prefix, out);
  }

  void collect_buffers(const std::string& prefix,
                       std::vector<BufferRef<S>>& out) override {
    main_->collect_buffers(prefix, out);
    if (proj_) proj_->collect_buffers(prefix, out);
  }

  void fingerprint(std::vector<std::string>& out) const override {
    out.push_back(concat("skip_block relu=", int(relu_after_add_)));
    main_->fingerprint(out);
    if (proj_) {
      out.push_back("skip_proj");
      proj_->fingerprint(out);
    } else {
      out.push_back("skip_identity");
    }
    out.push_back("skip_end");
  }

private:
  std::unique_ptr<Sequential<S>> main_;
  std::unique_ptr<Sequential<S>> proj_;
  bool relu_after_add_;
  std::vector<char> mask_;
};

template <typename S>
std::vector<ParamRef<S>> named_params(Layer<S>& net) {
  std::vector<ParamRef<S>> out;
  net.collect_params("", out);
  return out;
}

template <typename S>
std::vector<BufferRef<S>> named_buffers(Layer<S>& net) {
  std::vector<BufferRef<S>> out;
  net.collect_buffers("", out);
  return out;
}

template <typename S>
std::vector<std::string> fingerprint_lines(const Layer<S>& net) {
  std::vector<std::string> out;
  net.fingerprint(out);
  return out;
}

template <typename S>
std::size_t param_count(Layer<S>& net) {
  std::size_t n = 0;
  for (const auto& p : named_params(net)) n += p.value->numel();
  return n;
}

template <typename S>
void zero_grads(Layer<S>& net) {
  for (auto& p : named_params(net)) p.grad->fill(S(0));
}

}  // namespace edukd
