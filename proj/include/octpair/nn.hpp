#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "octpair/common.hpp"

namespace octpair::nn {

using octpair::Matrix;
using octpair::Vector;

// Batch of C-channel H x W feature maps. Storage is one c x (n*h*w) matrix,
// column index ((i*h)+y)*w + x, so channel statistics are plain row reductions.
template <typename Scalar>
struct FeatureMap {
  int n = 0, c = 0, h = 0, w = 0;
  Matrix<Scalar> data;

  static FeatureMap zeros(int n, int c, int h, int w) {
    FeatureMap fm;
    fm.n = n;
    fm.c = c;
    fm.h = h;
    fm.w = w;
    fm.data = Matrix<Scalar>::Zero(c, static_cast<Eigen::Index>(n) * h * w);
    return fm;
  }
  Eigen::Index item_cols() const { return static_cast<Eigen::Index>(h) * w; }
  auto item(int i) { return data.middleCols(static_cast<Eigen::Index>(i) * item_cols(), item_cols()); }
  auto item(int i) const {
    return data.middleCols(static_cast<Eigen::Index>(i) * item_cols(), item_cols());
  }
};

template <typename Scalar>
struct Param {
  std::string name;
  Matrix<Scalar> value;
  Matrix<Scalar> grad;
  bool trainable = true;  // running statistics are persisted but never stepped

  void zero_grad() { grad.setZero(); }
};

// Deterministic parameter fill; the stream depends only on (seed, name), not
// on registration order.
template <typename Scalar>
void fill_normal(Param<Scalar>& p, std::uint64_t seed, double stddev) {
  Rng rng(hash_combine(seed, hash_str(p.name)));
  for (Eigen::Index j = 0; j < p.value.cols(); ++j)
    for (Eigen::Index i = 0; i < p.value.rows(); ++i)
      p.value(i, j) = static_cast<Scalar>(rng.next_normal() * stddev);
}

template <typename Scalar>
class Layer {
 public:
  virtual ~Layer() = default;
  virtual FeatureMap<Scalar> forward(const FeatureMap<Scalar>& x, bool training) = 0;
  virtual FeatureMap<Scalar> backward(const FeatureMap<Scalar>& dy) = 0;
  virtual void collect(std::vector<Param<Scalar>*>& out) {}
  virtual void init(std::uint64_t seed) {}
};

// ---------------------------------------------------------------------------
// convolution
// ---------------------------------------------------------------------------

template <typename Scalar>
class Conv2d final : public Layer<Scalar> {
 public:
  Conv2d(std::string name, int in_c, int out_c, int ksize, int stride, int pad,
         bool bias = false)
      : in_c_(in_c), out_c_(out_c), k_(ksize), stride_(stride), pad_(pad),
        has_bias_(bias) {
    weight_.name = name + ".weight";
    weight_.value = Matrix<Scalar>::Zero(out_c, static_cast<Eigen::Index>(in_c) * k_ * k_);
    weight_.grad = weight_.value;
    if (has_bias_) {
      bias_.name = name + ".bias";
      bias_.value = Matrix<Scalar>::Zero(out_c, 1);
      bias_.grad = bias_.value;
    }
  }

  void init(std::uint64_t seed) override {
    // He initialization for ReLU stacks
    fill_normal(weight_, seed, std::sqrt(2.0 / static_cast<double>(in_c_ * k_ * k_)));
    if (has_bias_) bias_.value.setZero();
  }

  void collect(std::vector<Param<Scalar>*>& out) override {
    out.push_back(&weight_);
    if (has_bias_) out.push_back(&bias_);
  }

  int out_dim(int in) const { return (in + 2 * pad_ - k_) / stride_ + 1; }

  FeatureMap<Scalar> forward(const FeatureMap<Scalar>& x, bool) override {
    x_ = x;
    const int oh = out_dim(x.h);
    const int ow = out_dim(x.w);
    FeatureMap<Scalar> y = FeatureMap<Scalar>::zeros(x.n, out_c_, oh, ow);
    Matrix<Scalar> patches(static_cast<Eigen::Index>(in_c_) * k_ * k_,
                           static_cast<Eigen::Index>(oh) * ow);
    for (int i = 0; i < x.n; ++i) {
      im2col(x, i, oh, ow, patches);
      y.item(i).noalias() = weight_.value * patches;
      if (has_bias_) y.item(i).colwise() += bias_.value.col(0);
    }
    return y;
  }

  FeatureMap<Scalar> backward(const FeatureMap<Scalar>& dy) override {
    const int oh = dy.h;
    const int ow = dy.w;
    FeatureMap<Scalar> dx = FeatureMap<Scalar>::zeros(x_.n, x_.c, x_.h, x_.w);
    Matrix<Scalar> patches(static_cast<Eigen::Index>(in_c_) * k_ * k_,
                           static_cast<Eigen::Index>(oh) * ow);
    Matrix<Scalar> dpatches = patches;
    for (int i = 0; i < x_.n; ++i) {
      im2col(x_, i, oh, ow, patches);  // recomputed; cheaper than caching all items
      weight_.grad.noalias() += dy.item(i) * patches.transpose();
      if (has_bias_) bias_.grad.col(0) += dy.item(i).rowwise().sum();
      dpatches.noalias() = weight_.value.transpose() * dy.item(i);
      col2im(dpatches, i, oh, ow, dx);
    }
    return dx;
  }

 private:
  void im2col(const FeatureMap<Scalar>& x, int item, int oh, int ow,
              Matrix<Scalar>& patches) const {
    patches.setZero();
    const auto src = x.item(item);
    for (int ci = 0; ci < in_c_; ++ci) {
      for (int ky = 0; ky < k_; ++ky) {
        for (int kx = 0; kx < k_; ++kx) {
          const Eigen::Index row = (static_cast<Eigen::Index>(ci) * k_ + ky) * k_ + kx;
          for (int oy = 0; oy < oh; ++oy) {
            const int iy = oy * stride_ - pad_ + ky;
            if (iy < 0 || iy >= x.h) continue;
            for (int ox = 0; ox < ow; ++ox) {
              const int ix = ox * stride_ - pad_ + kx;
              if (ix < 0 || ix >= x.w) continue;
              patches(row, static_cast<Eigen::Index>(oy) * ow + ox) =
                  src(ci, static_cast<Eigen::Index>(iy) * x.w + ix);
            }
          }
        }
      }
    }
  }

  void col2im(const Matrix<Scalar>& dpatches, int item, int oh, int ow,
              FeatureMap<Scalar>& dx) const {
    auto dst = dx.item(item);
    for (int ci = 0; ci < in_c_; ++ci) {
      for (int ky = 0; ky < k_; ++ky) {
        for (int kx = 0; kx < k_; ++kx) {
          const Eigen::Index row = (static_cast<Eigen::Index>(ci) * k_ + ky) * k_ + kx;
          for (int oy = 0; oy < oh; ++oy) {
            const int iy = oy * stride_ - pad_ + ky;
            if (iy < 0 || iy >= dx.h) continue;
            for (int ox = 0; ox < ow; ++ox) {
              const int ix = ox * stride_ - pad_ + kx;
              if (ix < 0 || ix >= dx.w) continue;
              dst(ci, static_cast<Eigen::Index>(iy) * dx.w + ix) +=
                  dpatches(row, static_cast<Eigen::Index>(oy) * ow + ox);
            }
          }
        }
      }
    }
  }

  int in_c_, out_c_, k_, stride_, pad_;
  bool has_bias_;
  Param<Scalar> weight_;
  Param<Scalar> bias_;
  FeatureMap<Scalar> x_;
};

// ---------------------------------------------------------------------------
// batch normalization (per channel over N*H*W)
// ---------------------------------------------------------------------------

template <typename Scalar>
class BatchNorm2d final : public Layer<Scalar> {
 public:
  BatchNorm2d(std::string name, int channels, double momentum = 0.1,
              double eps = 1e-5)
      : c_(channels), momentum_(momentum), eps_(eps) {
    gamma_.name = name + ".gamma";
    gamma_.value = Matrix<Scalar>::Ones(channels, 1);
    gamma_.grad = Matrix<Scalar>::Zero(channels, 1);
    beta_.name = name + ".beta";
    beta_.value = Matrix<Scalar>::Zero(channels, 1);
    beta_.grad = beta_.value;
    running_mean_.name = name + ".running_mean";
    running_mean_.value = Matrix<Scalar>::Zero(channels, 1);
    running_mean_.grad = Matrix<Scalar>::Zero(0, 0);
    running_mean_.trainable = false;
    running_var_.name = name + ".running_var";
    running_var_.value = Matrix<Scalar>::Ones(channels, 1);
    running_var_.grad = Matrix<Scalar>::Zero(0, 0);
    running_var_.trainable = false;
  }

  void init(std::uint64_t) override {
    gamma_.value.setOnes();
    beta_.value.setZero();
    running_mean_.value.setZero();
    running_var_.value.setOnes();
  }

  void collect(std::vector<Param<Scalar>*>& out) override {
    out.push_back(&gamma_);
    out.push_back(&beta_);
    out.push_back(&running_mean_);
    out.push_back(&running_var_);
  }

  FeatureMap<Scalar> forward(const FeatureMap<Scalar>& x, bool training) override {
    const Eigen::Index m = x.data.cols();
    FeatureMap<Scalar> y = x;
    Vector<Scalar> mean(c_), var(c_);
    if (training) {
      mean = x.data.rowwise().mean();
      var = (x.data.colwise() - mean).array().square().rowwise().mean();
      const double unbias =
          m > 1 ? static_cast<double>(m) / static_cast<double>(m - 1) : 1.0;
      running_mean_.value.col(0) =
          (Scalar(1) - Scalar(momentum_)) * running_mean_.value.col(0) +
          Scalar(momentum_) * mean;
      running_var_.value.col(0) =
          (Scalar(1) - Scalar(momentum_)) * running_var_.value.col(0) +
          Scalar(momentum_ * unbias) * var;
    } else {
      mean = running_mean_.value.col(0);
      var = running_var_.value.col(0);
    }
    inv_std_ = (var.array() + Scalar(eps_)).rsqrt();
    xhat_ = inv_std_.asDiagonal() * (x.data.colwise() - mean);
    y.data = gamma_.value.col(0).asDiagonal() * xhat_;
    y.data.colwise() += beta_.value.col(0);
    training_ = training;
    return y;
  }

  FeatureMap<Scalar> backward(const FeatureMap<Scalar>& dy) override {
    const Eigen::Index m = dy.data.cols();
    FeatureMap<Scalar> dx = dy;
    Vector<Scalar> dgamma = (dy.data.array() * xhat_.array()).rowwise().sum();
    Vector<Scalar> dbeta = dy.data.rowwise().sum();
    gamma_.grad.col(0) += dgamma;
    beta_.grad.col(0) += dbeta;
    if (!training_) {
      // eval-mode statistics are constants
      dx.data = (gamma_.value.col(0).cwiseProduct(inv_std_)).asDiagonal() * dy.data;
      return dx;
    }
    const Scalar inv_m = Scalar(1) / static_cast<Scalar>(m);
    dx.data = dy.data * static_cast<Scalar>(m);
    dx.data.colwise() -= dbeta;
    dx.data -= dgamma.asDiagonal() * xhat_;
    dx.data = (gamma_.value.col(0).cwiseProduct(inv_std_) * inv_m).asDiagonal() * dx.data;
    return dx;
  }

 private:
  int c_;
  double momentum_, eps_;
  bool training_ = true;
  Param<Scalar> gamma_, beta_, running_mean_, running_var_;
  Matrix<Scalar> xhat_;
  Vector<Scalar> inv_std_;
};

template <typename Scalar>
class Relu final : public Layer<Scalar> {
 public:
  FeatureMap<Scalar> forward(const FeatureMap<Scalar>& x, bool) override {
    mask_ = (x.data.array() > Scalar(0)).template cast<Scalar>();
    FeatureMap<Scalar> y = x;
    y.data = x.data.cwiseProduct(mask_);
    return y;
  }
  FeatureMap<Scalar> backward(const FeatureMap<Scalar>& dy) override {
    FeatureMap<Scalar> dx = dy;
    dx.data = dy.data.cwiseProduct(mask_);
    return dx;
  }

 private:
  Matrix<Scalar> mask_;
};

template <typename Scalar>
class MaxPool2d final : public Layer<Scalar> {
 public:
  MaxPool2d(int ksize, int stride, int pad) : k_(ksize), stride_(stride), pad_(pad) {}

  int out_dim(int in) const { return (in + 2 * pad_ - k_) / stride_ + 1; }

  FeatureMap<Scalar> forward(const FeatureMap<Scalar>& x, bool) override {
    const int oh = out_dim(x.h);
    const int ow = out_dim(x.w);
    in_shape_ = {x.n, x.c, x.h, x.w};
    FeatureMap<Scalar> y = FeatureMap<Scalar>::zeros(x.n, x.c, oh, ow);
    argmax_.resize(x.c, y.data.cols());
    for (int i = 0; i < x.n; ++i) {
      const auto src = x.item(i);
      auto dst = y.item(i);
      for (int ci = 0; ci < x.c; ++ci) {
        for (int oy = 0; oy < oh; ++oy) {
          for (int ox = 0; ox < ow; ++ox) {
            Scalar best = -std::numeric_limits<Scalar>::infinity();
            Eigen::Index best_idx = -1;
            for (int ky = 0; ky < k_; ++ky) {
              const int iy = oy * stride_ - pad_ + ky;
              if (iy < 0 || iy >= x.h) continue;
              for (int kx = 0; kx < k_; ++kx) {
                const int ix = ox * stride_ - pad_ + kx;
                if (ix < 0 || ix >= x.w) continue;
                const Scalar v = src(ci, static_cast<Eigen::Index>(iy) * x.w + ix);
                if (v > best) {
                  best = v;
                  best_idx = static_cast<Eigen::Index>(iy) * x.w + ix;
                }
              }
            }
            dst(ci, static_cast<Eigen::Index>(oy) * ow + ox) = best;
            argmax_(ci, static_cast<Eigen::Index>(i) * oh * ow + oy * ow + ox) = best_idx;
          }
        }
      }
    }
    return y;
  }

  FeatureMap<Scalar> backward(const FeatureMap<Scalar>& dy) override {
    FeatureMap<Scalar> dx =
        FeatureMap<Scalar>::zeros(in_shape_[0], in_shape_[1], in_shape_[2], in_shape_[3]);
    const Eigen::Index per_item = static_cast<Eigen::Index>(dy.h) * dy.w;
    for (int i = 0; i < dy.n; ++i) {
      const auto gsrc = dy.item(i);
      auto gdst = dx.item(i);
      for (int ci = 0; ci < dy.c; ++ci)
        for (Eigen::Index o = 0; o < per_item; ++o)
          gdst(ci, argmax_(ci, static_cast<Eigen::Index>(i) * per_item + o)) += gsrc(ci, o);
    }
    return dx;
  }

 private:
  int k_, stride_, pad_;
  std::array<int, 4> in_shape_{};
  Eigen::Matrix<Eigen::Index, Eigen::Dynamic, Eigen::Dynamic> argmax_;
};

// Residual block: conv-bn-relu-conv-bn plus identity (1x1 conv + bn when the
// shape changes), final relu.
template <typename Scalar>
class BasicBlock final : public Layer<Scalar> {
 public:
  BasicBlock(const std::string& name, int in_c, int out_c, int stride)
      : conv1_(name + ".conv1", in_c, out_c, 3, stride, 1),
        bn1_(name + ".bn1", out_c),
        conv2_(name + ".conv2", out_c, out_c, 3, 1, 1),
        bn2_(name + ".bn2", out_c) {
    if (stride != 1 || in_c != out_c) {
      down_conv_ = std::make_unique<Conv2d<Scalar>>(name + ".down.conv", in_c, out_c,
                                                    1, stride, 0);
      down_bn_ = std::make_unique<BatchNorm2d<Scalar>>(name + ".down.bn", out_c);
    }
  }

  void init(std::uint64_t seed) override {
    conv1_.init(seed);
    bn1_.init(seed);
    conv2_.init(seed);
    bn2_.init(seed);
    if (down_conv_) down_conv_->init(seed);
    if (down_bn_) down_bn_->init(seed);
  }

  void collect(std::vector<Param<Scalar>*>& out) override {
    conv1_.collect(out);
    bn1_.collect(out);
    conv2_.collect(out);
    bn2_.collect(out);
    if (down_conv_) down_conv_->collect(out);
    if (down_bn_) down_bn_->collect(out);
  }

  FeatureMap<Scalar> forward(const FeatureMap<Scalar>& x, bool training) override {
    FeatureMap<Scalar> main = relu1_.forward(bn1_.forward(conv1_.forward(x, training), training), training);
    main = bn2_.forward(conv2_.forward(main, training), training);
    FeatureMap<Scalar> skip =
        down_conv_ ? down_bn_->forward(down_conv_->forward(x, training), training) : x;
    main.data += skip.data;
    return relu2_.forward(main, training);
  }

  FeatureMap<Scalar> backward(const FeatureMap<Scalar>& dy) override {
    FeatureMap<Scalar> dsum = relu2_.backward(dy);
    FeatureMap<Scalar> dmain = conv1_.backward(
        bn1_.backward(relu1_.backward(conv2_.backward(bn2_.backward(dsum)))));
    FeatureMap<Scalar> dskip =
        down_conv_ ? down_conv_->backward(down_bn_->backward(dsum)) : dsum;
    dmain.data += dskip.data;
    return dmain;
  }

 private:
  Conv2d<Scalar> conv1_;
  BatchNorm2d<Scalar> bn1_;
  Conv2d<Scalar> conv2_;
  BatchNorm2d<Scalar> bn2_;
  Relu<Scalar> relu1_, relu2_;
  std::unique_ptr<Conv2d<Scalar>> down_conv_;
  std::unique_ptr<BatchNorm2d<Scalar>> down_bn_;
};

// Global average pooling: feature maps -> one column per item.
template <typename Scalar>
struct GlobalAvgPool {
  Matrix<Scalar> forward(const FeatureMap<Scalar>& x) {
    in_shape_ = {x.n, x.c, x.h, x.w};
    Matrix<Scalar> y(x.c, x.n);
    for (int i = 0; i < x.n; ++i) y.col(i) = x.item(i).rowwise().mean();
    return y;
  }
  FeatureMap<Scalar> backward(const Matrix<Scalar>& dy) {
    FeatureMap<Scalar> dx =
        FeatureMap<Scalar>::zeros(in_shape_[0], in_shape_[1], in_shape_[2], in_shape_[3]);
    const Scalar inv = Scalar(1) / static_cast<Scalar>(dx.item_cols());
    for (int i = 0; i < dx.n; ++i) dx.item(i).colwise() = dy.col(i) * inv;
    return dx;
  }
  std::array<int, 4> in_shape_{};
};

// Dense layer on (features x batch) matrices.
template <typename Scalar>
class Linear {
 public:
  Linear(std::string name, int in_dim, int out_dim) : in_dim_(in_dim) {
    weight_.name = name + ".weight";
    weight_.value = Matrix<Scalar>::Zero(out_dim, in_dim);
    weight_.grad = weight_.value;
    bias_.name = name + ".bias";
    bias_.value = Matrix<Scalar>::Zero(out_dim, 1);
    bias_.grad = bias_.value;
  }

  void init(std::uint64_t seed) {
    fill_normal(weight_, seed, std::sqrt(2.0 / static_cast<double>(in_dim_)));
    bias_.value.setZero();
  }

  void collect(std::vector<Param<Scalar>*>& out) {
    out.push_back(&weight_);
    out.push_back(&bias_);
  }

  Matrix<Scalar> forward(const Matrix<Scalar>& x) {
    x_ = x;
    Matrix<Scalar> y = weight_.value * x;
    y.colwise() += bias_.value.col(0);
    return y;
  }

  Matrix<Scalar> backward(const Matrix<Scalar>& dy) {
    weight_.grad.noalias() += dy * x_.transpose();
    bias_.grad.col(0) += dy.rowwise().sum();
    return weight_.value.transpose() * dy;
  }

 private:
  int in_dim_;
  Param<Scalar> weight_, bias_;
  Matrix<Scalar> x_;
};

// ---------------------------------------------------------------------------
// optimizer
// ---------------------------------------------------------------------------

template <typename Scalar>
class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(const std::vector<Param<Scalar>*>& params) {
    ++t_;
    if (state_.size() != params.size()) {
      state_.clear();
      state_.resize(params.size());
    }
    const double bc1 = 1.0 - std::pow(beta1_, t_);
    const double bc2 = 1.0 - std::pow(beta2_, t_);
    for (std::size_t i = 0; i < params.size(); ++i) {
      Param<Scalar>& p = *params[i];
      if (!p.trainable) continue;
      State& s = state_[i];
      if (s.m.size() == 0) {
        s.m = Matrix<Scalar>::Zero(p.value.rows(), p.value.cols());
        s.v = s.m;
      }
      s.m = Scalar(beta1_) * s.m + Scalar(1.0 - beta1_) * p.grad;
      s.v = Scalar(beta2_) * s.v + Scalar(1.0 - beta2_) * p.grad.cwiseProduct(p.grad);
      p.value.array() -= Scalar(lr_) * (s.m.array() / Scalar(bc1)) /
                         ((s.v.array() / Scalar(bc2)).sqrt() + Scalar(eps_));
    }
  }

  void zero_grad(const std::vector<Param<Scalar>*>& params) {
    for (Param<Scalar>* p : params)
      if (p->trainable) p->zero_grad();
  }

 private:
  struct State {
    Matrix<Scalar> m, v;
  };
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<State> state_;
};

}  // namespace octpair::nn
