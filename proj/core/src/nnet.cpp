// Copyright 2026 The geokp Authors
// SPDX-License-Identifier: Apache-2.0

#include "geokp/nnet.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <string>

namespace geokp {

namespace {

void glorot_fill(Eigen::MatrixXd& w, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(w.rows() + w.cols()));
  std::uniform_real_distribution<double> uniform(-bound, bound);
  for (Eigen::Index c = 0; c < w.cols(); ++c) {
    for (Eigen::Index r = 0; r < w.rows(); ++r) w(r, c) = uniform(rng);
  }
}

Eigen::MatrixXd relu(const Eigen::MatrixXd& z) { return z.cwiseMax(0.0); }

Eigen::VectorXd relu(const Eigen::VectorXd& z) { return z.cwiseMax(0.0); }

// derivative taken as 0 at exactly 0
template <class Derived>
auto relu_mask(const Eigen::MatrixBase<Derived>& z) {
  return (z.array() > 0.0).template cast<double>();
}

void check_dims(const ModelParams& p) {
  const auto k = static_cast<Eigen::Index>(p.k);
  const auto m = static_cast<Eigen::Index>(p.m);
  const bool ok = p.t.enc1_w.rows() == kEncHidden && p.t.enc1_w.cols() == 3 &&
                  p.t.enc1_b.rows() == kEncHidden && p.t.enc1_b.cols() == 1 &&
                  p.t.enc2_w.rows() == kEncFeature && p.t.enc2_w.cols() == kEncHidden &&
                  p.t.enc2_b.rows() == kEncFeature && p.t.enc2_b.cols() == 1 &&
                  p.t.head1_w.rows() == kHeadHidden && p.t.head1_w.cols() == 2 * kEncFeature &&
                  p.t.head1_b.rows() == kHeadHidden && p.t.head1_b.cols() == 1 &&
                  p.t.head2_w.rows() == k && p.t.head2_w.cols() == kHeadHidden &&
                  p.t.head2_b.rows() == k && p.t.head2_b.cols() == 1 &&
                  p.t.dec1_w.rows() == kDecHidden && p.t.dec1_w.cols() == 3 * k &&
                  p.t.dec1_b.rows() == kDecHidden && p.t.dec1_b.cols() == 1 &&
                  p.t.dec2_w.rows() == kDecHidden && p.t.dec2_w.cols() == kDecHidden &&
                  p.t.dec2_b.rows() == kDecHidden && p.t.dec2_b.cols() == 1 &&
                  p.t.dec3_w.rows() == 3 * m && p.t.dec3_w.cols() == kDecHidden &&
                  p.t.dec3_b.rows() == 3 * m && p.t.dec3_b.cols() == 1;
  if (!ok) throw Error(Errc::invalid_dims, "parameter tensors inconsistent with K/M");
}

}  // namespace

ModelParams init_params(int k, int m, std::uint64_t seed) {
  if (k < 2 || m < 1) throw Error(Errc::invalid_dims, "need k >= 2 and m >= 1");
  ModelParams p;
  p.k = k;
  p.m = m;
  p.t.enc1_w.resize(kEncHidden, 3);
  p.t.enc1_b = Eigen::MatrixXd::Zero(kEncHidden, 1);
  p.t.enc2_w.resize(kEncFeature, kEncHidden);
  p.t.enc2_b = Eigen::MatrixXd::Zero(kEncFeature, 1);
  p.t.head1_w.resize(kHeadHidden, 2 * kEncFeature);
  p.t.head1_b = Eigen::MatrixXd::Zero(kHeadHidden, 1);
  p.t.head2_w.resize(k, kHeadHidden);
  p.t.head2_b = Eigen::MatrixXd::Zero(k, 1);
  p.t.dec1_w.resize(kDecHidden, 3 * k);
  p.t.dec1_b = Eigen::MatrixXd::Zero(kDecHidden, 1);
  p.t.dec2_w.resize(kDecHidden, kDecHidden);
  p.t.dec2_b = Eigen::MatrixXd::Zero(kDecHidden, 1);
  p.t.dec3_w.resize(3 * m, kDecHidden);
  p.t.dec3_b = Eigen::MatrixXd::Zero(3 * m, 1);

  std::mt19937_64 rng(seed);
  glorot_fill(p.t.enc1_w, rng);
  glorot_fill(p.t.enc2_w, rng);
  glorot_fill(p.t.head1_w, rng);
  glorot_fill(p.t.head2_w, rng);
  glorot_fill(p.t.dec1_w, rng);
  glorot_fill(p.t.dec2_w, rng);
  glorot_fill(p.t.dec3_w, rng);
  return p;
}

std::size_t param_count(const ModelParams& params) {
  std::size_t count = 0;
  for (auto member : kTensorMembers) count += static_cast<std::size_t>((params.t.*member).size());
  return count;
}

ForwardResult forward(const ModelParams& params, const PointCloud& cloud) {
  check_dims(params);
  const Eigen::Index n = cloud.size();
  if (n < 1) throw Error(Errc::empty_cloud, "forward needs a non-empty cloud");

  ForwardResult r;
  ForwardCache& c = r.cache;
  c.params_revision = params.revision;
  c.x = cloud.points.transpose();  // 3 x N

  // shared per-point encoder
  c.z1 = (params.t.enc1_w * c.x).colwise() + params.t.enc1_b.col(0);
  c.h1 = relu(c.z1);
  c.z2 = (params.t.enc2_w * c.h1).colwise() + params.t.enc2_b.col(0);
  c.h2 = relu(c.z2);

  // global context: per-channel max over points
  Eigen::VectorXd pooled(kEncFeature);
  c.pool_argmax.assign(kEncFeature, 0);
  for (int f = 0; f < kEncFeature; ++f) {
    Eigen::Index arg = 0;
    pooled[f] = c.h2.row(f).maxCoeff(&arg);
    c.pool_argmax[static_cast<std::size_t>(f)] = arg;
  }
  c.concat.resize(2 * kEncFeature, n);
  c.concat.topRows(kEncFeature) = c.h2;
  c.concat.bottomRows(kEncFeature) = pooled.replicate(1, n);

  // scoring head: K per-point scores, then a softmax across the points
  c.z3 = (params.t.head1_w * c.concat).colwise() + params.t.head1_b.col(0);
  c.h3 = relu(c.z3);
  Eigen::MatrixXd scores = (params.t.head2_w * c.h3).colwise() + params.t.head2_b.col(0);

  c.w.resize(params.k, n);
  for (Eigen::Index j = 0; j < params.k; ++j) {
    const double row_max = scores.row(j).maxCoeff();
    c.w.row(j) = (scores.row(j).array() - row_max).exp();
    c.w.row(j) /= c.w.row(j).sum();
  }

  r.w.w = c.w;
  r.keypoints.positions = c.w * cloud.points;

  // decoder on the flattened keypoints
  c.dec_in.resize(3 * params.k);
  for (int j = 0; j < params.k; ++j) {
    c.dec_in.segment<3>(3 * j) = r.keypoints.positions.row(j).transpose();
  }
  c.za = params.t.dec1_w * c.dec_in + params.t.dec1_b.col(0);
  c.ha = relu(c.za);
  c.zb = params.t.dec2_w * c.ha + params.t.dec2_b.col(0);
  c.hb = relu(c.zb);
  c.out = params.t.dec3_w * c.hb + params.t.dec3_b.col(0);

  r.reconstruction.frame_id = cloud.frame_id;
  r.reconstruction.points.resize(params.m, 3);
  for (int i = 0; i < params.m; ++i) {
    r.reconstruction.points.row(i) = c.out.segment<3>(3 * i).transpose();
  }
  return r;
}

ModelTensors zeros_like(const ModelParams& params) {
  ModelTensors g;
  for (auto member : kTensorMembers) {
    (g.*member) = Eigen::MatrixXd::Zero((params.t.*member).rows(), (params.t.*member).cols());
  }
  return g;
}

ModelTensors backward(const ModelParams& params, const ForwardCache& cache,
                      const Eigen::MatrixXd& grad_w, const GradPoints& grad_keypoints,
                      const GradPoints& grad_recon) {
  check_dims(params);
  if (cache.params_revision != params.revision) {
    throw Error(Errc::stale_cache, "forward cache predates a parameter update");
  }
  const Eigen::Index n = cache.x.cols();
  const Eigen::Index k = params.k;

  ModelTensors g = zeros_like(params);

  // decoder
  Eigen::VectorXd d_keypoints_flat = Eigen::VectorXd::Zero(3 * k);
  if (grad_recon.size() != 0) {
    if (grad_recon.rows() != params.m) throw Error(Errc::shape_mismatch, "grad_recon rows != M");
    Eigen::VectorXd dout(3 * params.m);
    for (int i = 0; i < params.m; ++i) dout.segment<3>(3 * i) = grad_recon.row(i).transpose();

    g.dec3_w = dout * cache.hb.transpose();
    g.dec3_b = dout;
    Eigen::VectorXd dhb = params.t.dec3_w.transpose() * dout;
    Eigen::VectorXd dzb = dhb.array() * relu_mask(cache.zb);
    g.dec2_w = dzb * cache.ha.transpose();
    g.dec2_b = dzb;
    Eigen::VectorXd dha = params.t.dec2_w.transpose() * dzb;
    Eigen::VectorXd dza = dha.array() * relu_mask(cache.za);
    g.dec1_w = dza * cache.dec_in.transpose();
    g.dec1_b = dza;
    d_keypoints_flat = params.t.dec1_w.transpose() * dza;
  }

  // combine the keypoint gradients (loss terms + decoder input)
  GradPoints d_kp = GradPoints::Zero(k, 3);
  if (grad_keypoints.size() != 0) {
    if (grad_keypoints.rows() != k) throw Error(Errc::shape_mismatch, "grad_keypoints rows != K");
    d_kp = grad_keypoints;
  }
  for (Eigen::Index j = 0; j < k; ++j) {
    d_kp.row(j) += d_keypoints_flat.segment<3>(3 * j).transpose();
  }

  // keypoints = W * X, so dL/dW += d_kp * X^T
  Eigen::MatrixXd dw = d_kp * cache.x;  // (K x 3) * (3 x N)
  if (grad_w.size() != 0) {
    if (grad_w.rows() != k || grad_w.cols() != n) {
      throw Error(Errc::shape_mismatch, "grad_w must be K x N");
    }
    dw += grad_w;
  }

  // softmax backward, row-wise over the points
  Eigen::MatrixXd dscores(k, n);
  for (Eigen::Index j = 0; j < k; ++j) {
    const double dot = dw.row(j).cwiseProduct(cache.w.row(j)).sum();
    dscores.row(j) = cache.w.row(j).array() * (dw.row(j).array() - dot);
  }

  // scoring head
  g.head2_w = dscores * cache.h3.transpose();
  g.head2_b = dscores.rowwise().sum();
  Eigen::MatrixXd dh3 = params.t.head2_w.transpose() * dscores;
  Eigen::MatrixXd dz3 = dh3.array() * relu_mask(cache.z3);
  g.head1_w = dz3 * cache.concat.transpose();
  g.head1_b = dz3.rowwise().sum();
  Eigen::MatrixXd dconcat = params.t.head1_w.transpose() * dz3;

  // split the concat gradient; pooled part routes to each channel's argmax
  Eigen::MatrixXd dh2 = dconcat.topRows(kEncFeature);
  const Eigen::VectorXd dpool = dconcat.bottomRows(kEncFeature).rowwise().sum();
  for (int f = 0; f < kEncFeature; ++f) {
    dh2(f, cache.pool_argmax[static_cast<std::size_t>(f)]) += dpool[f];
  }

  // encoder
  Eigen::MatrixXd dz2 = dh2.array() * relu_mask(cache.z2);
  g.enc2_w = dz2 * cache.h1.transpose();
  g.enc2_b = dz2.rowwise().sum();
  Eigen::MatrixXd dh1 = params.t.enc2_w.transpose() * dz2;
  Eigen::MatrixXd dz1 = dh1.array() * relu_mask(cache.z1);
  g.enc1_w = dz1 * cache.x.transpose();
  g.enc1_b = dz1.rowwise().sum();
  return g;
}

AdamState make_adam_state(const ModelParams& params, double lr) {
  AdamState state;
  state.lr = lr;
  state.m1 = zeros_like(params);
  state.m2 = zeros_like(params);
  return state;
}

void adam_step(ModelParams& params, const ModelTensors& grads, AdamState& state) {
  ++state.step;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (auto member : kTensorMembers) {
    Eigen::MatrixXd& p = params.t.*member;
    const Eigen::MatrixXd& g = grads.*member;
    if (p.rows() != g.rows() || p.cols() != g.cols()) {
      throw Error(Errc::shape_mismatch, "gradient shape differs from parameters");
    }
    Eigen::MatrixXd& m1 = state.m1.*member;
    Eigen::MatrixXd& m2 = state.m2.*member;
    m1 = state.beta1 * m1 + (1.0 - state.beta1) * g;
    m2 = state.beta2 * m2 + (1.0 - state.beta2) * g.cwiseProduct(g);
    p.array() -= state.lr * (m1.array() / bc1) / ((m2.array() / bc2).sqrt() + state.eps);
  }
  ++params.revision;
}

// --- checkpoint io ----------------------------------------------------------

namespace {
constexpr char kCheckpointMagic[4] = {'G', 'K', 'P', 'M'};
constexpr std::uint32_t kCheckpointVersion = 1;
}  // namespace

void save_checkpoint(const ModelParams& params, const std::filesystem::path& file) {
  check_dims(params);
  const std::filesystem::path tmp = file.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw Error(Errc::io, "cannot write " + tmp.string());
    out.write(kCheckpointMagic, 4);
    out.write(reinterpret_cast<const char*>(&kCheckpointVersion), 4);
    const auto k = static_cast<std::uint32_t>(params.k);
    const auto m = static_cast<std::uint32_t>(params.m);
    out.write(reinterpret_cast<const char*>(&k), 4);
    out.write(reinterpret_cast<const char*>(&m), 4);
    const auto count = static_cast<std::uint32_t>(kTensorMembers.size());
    out.write(reinterpret_cast<const char*>(&count), 4);
    for (auto member : kTensorMembers) {
      const Eigen::MatrixXd& t = params.t.*member;
      const auto rows = static_cast<std::uint32_t>(t.rows());
      const auto cols = static_cast<std::uint32_t>(t.cols());
      out.write(reinterpret_cast<const char*>(&rows), 4);
      out.write(reinterpret_cast<const char*>(&cols), 4);
    }
    for (auto member : kTensorMembers) {
      const Eigen::MatrixXd& t = params.t.*member;
      out.write(reinterpret_cast<const char*>(t.data()),
                static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(t.size())));
    }
    if (!out) throw Error(Errc::io, "short write to " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, file, ec);
  if (ec) throw Error(Errc::io, "cannot move checkpoint into place: " + ec.message());
}

ModelParams load_checkpoint(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw Error(Errc::io, "cannot open " + file.string());

  char magic[4];
  std::uint32_t version = 0, k = 0, m = 0, count = 0;
  in.read(magic, 4);
  in.read(reinterpret_cast<char*>(&version), 4);
  in.read(reinterpret_cast<char*>(&k), 4);
  in.read(reinterpret_cast<char*>(&m), 4);
  in.read(reinterpret_cast<char*>(&count), 4);
  if (!in || std::memcmp(magic, kCheckpointMagic, 4) != 0) {
    throw Error(Errc::bad_checkpoint, file.string() + " is not a model checkpoint");
  }
  if (version != kCheckpointVersion || count != kTensorMembers.size()) {
    throw Error(Errc::bad_checkpoint, file.string() + ": unsupported version or layout");
  }

  ModelParams params;
  params.k = static_cast<int>(k);
  params.m = static_cast<int>(m);
  std::vector<std::pair<std::uint32_t, std::uint32_t>> dims(count);
  for (auto& [rows, cols] : dims) {
    in.read(reinterpret_cast<char*>(&rows), 4);
    in.read(reinterpret_cast<char*>(&cols), 4);
  }
  if (!in) throw Error(Errc::bad_checkpoint, file.string() + ": truncated dimension table");

  for (std::size_t i = 0; i < kTensorMembers.size(); ++i) {
    Eigen::MatrixXd& t = params.t.*kTensorMembers[i];
    t.resize(static_cast<Eigen::Index>(dims[i].first), static_cast<Eigen::Index>(dims[i].second));
    in.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(t.size())));
  }
  if (!in) throw Error(Errc::bad_checkpoint, file.string() + ": truncated parameter payload");
  in.peek();
  if (!in.eof()) throw Error(Errc::bad_checkpoint, file.string() + ": trailing bytes");

  try {
    check_dims(params);
  } catch (const Error&) {
    throw Error(Errc::bad_checkpoint, file.string() + ": dimension table inconsistent with K/M");
  }
  return params;
}

}  // namespace geokp
