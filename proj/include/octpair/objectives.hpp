#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "octpair/common.hpp"

namespace octpair {

// Cosine similarity, clamped to [-1, 1] against rounding.
template <typename DerivedA, typename DerivedB>
typename DerivedA::Scalar cosine_sim(const Eigen::MatrixBase<DerivedA>& a,
                                     const Eigen::MatrixBase<DerivedB>& b) {
  using Scalar = typename DerivedA::Scalar;
  const Scalar na = a.norm();
  const Scalar nb = b.norm();
  if (na == Scalar(0) || nb == Scalar(0))
    throw ConfigError("cosine similarity undefined for zero-norm vectors");
  const Scalar s = a.dot(b) / (na * nb);
  return std::clamp(s, Scalar(-1), Scalar(1));
}

// One batch of aligned embeddings: row i of Z_int and Z_phs is a positive pair.
template <typename Scalar>
struct ContrastiveBatchT {
  Matrix<Scalar> z_int;  // N x D
  Matrix<Scalar> z_phs;  // N x D
  Scalar temperature = Scalar(0.1);
};

using ContrastiveBatch = ContrastiveBatchT<float>;

template <typename Scalar>
struct ContrastiveResult {
  Scalar loss = Scalar(0);
  Matrix<Scalar> grad_int;  // dL/dZ_int, N x D
  Matrix<Scalar> grad_phs;  // dL/dZ_phs, N x D
};

// Intensity-anchored contrastive loss, mean over anchors. Per anchor i the
// positive is (z_int_i, z_phs_i); the candidate pool adds every other phase
// row (S1) and every other intensity row (S2). Phase rows never anchor.
// Log-sum-exp is computed with a max shift; the value is unchanged.
template <typename Scalar>
ContrastiveResult<Scalar> contrastive_loss_with_grad(const ContrastiveBatchT<Scalar>& batch,
                                                     bool want_grad = true) {
  const Eigen::Index n = batch.z_int.rows();
  const Eigen::Index d = batch.z_int.cols();
  if (n < 1) throw ConfigError("contrastive batch must be nonempty");
  if (batch.z_phs.rows() != n || batch.z_phs.cols() != d)
    throw ConfigError("Z_int and Z_phs shapes differ");
  if (!(batch.temperature > Scalar(0)))
    throw ConfigError("temperature must be > 0");

  Vector<Scalar> norm_int = batch.z_int.rowwise().norm();
  Vector<Scalar> norm_phs = batch.z_phs.rowwise().norm();
  if ((norm_int.array() == Scalar(0)).any() || (norm_phs.array() == Scalar(0)).any())
    throw ConfigError("contrastive batch contains a zero-norm embedding row");

  const Matrix<Scalar> u = norm_int.cwiseInverse().asDiagonal() * batch.z_int;
  const Matrix<Scalar> v = norm_phs.cwiseInverse().asDiagonal() * batch.z_phs;

  const Scalar inv_tau = Scalar(1) / batch.temperature;
  const Matrix<Scalar> cross = u * v.transpose() * inv_tau;  // sim(int_i, phs_j)/tau
  const Matrix<Scalar> self = u * u.transpose() * inv_tau;   // sim(int_i, int_j)/tau

  ContrastiveResult<Scalar> result;
  // softmax responsibilities per anchor row, diag(self) excluded
  Matrix<Scalar> p_cross(n, n);
  Matrix<Scalar> p_self(n, n);
  Scalar loss_sum = Scalar(0);
  for (Eigen::Index i = 0; i < n; ++i) {
    Scalar m = cross(i, i);
    for (Eigen::Index j = 0; j < n; ++j) {
      m = std::max(m, cross(i, j));
      if (j != i) m = std::max(m, self(i, j));
    }
    Scalar z = Scalar(0);
    for (Eigen::Index j = 0; j < n; ++j) {
      z += std::exp(cross(i, j) - m);
      if (j != i) z += std::exp(self(i, j) - m);
    }
    const Scalar log_z = std::log(z) + m;
    loss_sum += log_z - cross(i, i);
    if (want_grad) {
      for (Eigen::Index j = 0; j < n; ++j) {
        p_cross(i, j) = std::exp(cross(i, j) - log_z);
        p_self(i, j) = j == i ? Scalar(0) : std::exp(self(i, j) - log_z);
      }
    }
  }
  result.loss = loss_sum / static_cast<Scalar>(n);
  if (!want_grad) return result;

  // d loss / d similarity matrices, then back through normalization
  Matrix<Scalar> g_cross = p_cross;
  g_cross.diagonal().array() -= Scalar(1);
  const Scalar scale = inv_tau / static_cast<Scalar>(n);
  g_cross *= scale;
  const Matrix<Scalar> g_self = p_self * scale;

  const Matrix<Scalar> du = g_cross * v + (g_self + g_self.transpose()) * u;
  const Matrix<Scalar> dv = g_cross.transpose() * u;

  result.grad_int.resize(n, d);
  result.grad_phs.resize(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    // z = |z| u  =>  dL/dz = (dL/du - (dL/du . u) u) / |z|
    const Scalar proj_u = du.row(i).dot(u.row(i));
    result.grad_int.row(i) = (du.row(i) - proj_u * u.row(i)) / norm_int(i);
    const Scalar proj_v = dv.row(i).dot(v.row(i));
    result.grad_phs.row(i) = (dv.row(i) - proj_v * v.row(i)) / norm_phs(i);
  }
  return result;
}

template <typename Scalar>
Scalar contrastive_loss(const ContrastiveBatchT<Scalar>& batch) {
  return contrastive_loss_with_grad(batch, /*want_grad=*/false).loss;
}

// Extension, off by default and unused in reproduction runs: mean of the
// intensity-anchored loss and its phase-anchored mirror.
template <typename Scalar>
ContrastiveResult<Scalar> symmetric_contrastive_loss_with_grad(
    const ContrastiveBatchT<Scalar>& batch, bool want_grad = true) {
  ContrastiveResult<Scalar> fwd = contrastive_loss_with_grad(batch, want_grad);
  ContrastiveBatchT<Scalar> swapped{batch.z_phs, batch.z_int, batch.temperature};
  ContrastiveResult<Scalar> bwd = contrastive_loss_with_grad(swapped, want_grad);
  ContrastiveResult<Scalar> out;
  out.loss = Scalar(0.5) * (fwd.loss + bwd.loss);
  if (want_grad) {
    out.grad_int = Scalar(0.5) * (fwd.grad_int + bwd.grad_phs);
    out.grad_phs = Scalar(0.5) * (fwd.grad_phs + bwd.grad_int);
  }
  return out;
}

// ---------------------------------------------------------------------------
// cross-entropy
// ---------------------------------------------------------------------------

template <typename Scalar>
struct CrossEntropyResult {
  Scalar loss = Scalar(0);
  Matrix<Scalar> grad_logits;  // N x C
};

// Mean negative log-softmax of the true class. Optional per-class weights
// (PyTorch-style: weighted terms divided by the sum of selected weights).
template <typename Scalar>
CrossEntropyResult<Scalar> cross_entropy_with_grad(const Matrix<Scalar>& logits,
                                                   const std::vector<int>& labels,
                                                   const Vector<Scalar>* class_weights = nullptr,
                                                   bool want_grad = true) {
  const Eigen::Index n = logits.rows();
  const Eigen::Index c = logits.cols();
  if (n < 1) throw ConfigError("cross_entropy needs at least one sample");
  if (static_cast<Eigen::Index>(labels.size()) != n)
    throw ConfigError("labels size does not match logits rows");
  if (class_weights && class_weights->size() != c)
    throw ConfigError("class_weights size does not match class count");

  CrossEntropyResult<Scalar> result;
  if (want_grad) result.grad_logits.resize(n, c);

  Scalar weight_sum = Scalar(0);
  Scalar loss_sum = Scalar(0);
  for (Eigen::Index i = 0; i < n; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= c) throw ConfigError("label out of range");
    const Scalar m = logits.row(i).maxCoeff();
    Vector<Scalar> p = (logits.row(i).array() - m).exp();
    const Scalar z = p.sum();
    p /= z;
    const Scalar w = class_weights ? (*class_weights)(y) : Scalar(1);
    weight_sum += w;
    loss_sum += -w * (logits(i, y) - m - std::log(z));
    if (want_grad) {
      result.grad_logits.row(i) = w * p.transpose();
      result.grad_logits(i, y) -= w;
    }
  }
  result.loss = loss_sum / weight_sum;
  if (want_grad) result.grad_logits /= weight_sum;
  return result;
}

template <typename Scalar>
Scalar cross_entropy(const Matrix<Scalar>& logits, const std::vector<int>& labels,
                     const Vector<Scalar>* class_weights = nullptr) {
  return cross_entropy_with_grad(logits, labels, class_weights, /*want_grad=*/false).loss;
}

}  // namespace octpair
