// Copyright 2026 The geokp Authors
// SPDX-License-Identifier: Apache-2.0

#include "geokp/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "geokp/parallel.hpp"
#include "geokp/trainer.hpp"

namespace geokp {

double t_con(std::span<const KeypointSet> kp_seq) {
  if (kp_seq.size() < 2) throw Error(Errc::too_few_frames, "t_con needs T >= 2");
  const Eigen::Index k = kp_seq[0].size();
  long hits = 0;
  long checks = 0;
  for (std::size_t t = 0; t + 1 < kp_seq.size(); ++t) {
    const auto& cur = kp_seq[t].positions;
    const auto& next = kp_seq[t + 1].positions;
    if (kp_seq[t + 1].size() != k) throw Error(Errc::shape_mismatch, "keypoint sets disagree on K");
    for (Eigen::Index i = 0; i < k; ++i) {
      Eigen::Index best = 0;
      double best_d2 = std::numeric_limits<double>::infinity();
      for (Eigen::Index j = 0; j < k; ++j) {
        const double d2 = (cur.row(i) - next.row(j)).squaredNorm();
        if (d2 < best_d2) {
          best_d2 = d2;
          best = j;
        }
      }
      hits += best == i ? 1 : 0;
      ++checks;
    }
  }
  return 100.0 * static_cast<double>(hits) / static_cast<double>(checks);
}

PckCurve pck(const SequenceWindow& window, std::span<const ProbabilityMatrix> ws,
             std::span<const double> taus) {
  const std::size_t frames = window.frames.size();
  if (frames < 2) throw Error(Errc::too_few_frames, "pck needs T >= 2");
  if (!window.correspondences || window.correspondences->size() != frames - 1) {
    throw Error(Errc::missing_correspondence, "pck needs ground-truth correspondences");
  }
  if (ws.size() != frames) throw Error(Errc::shape_mismatch, "need one probability matrix per frame");

  const Eigen::Index k = ws[0].keypoints();
  const Eigen::Index n = window.frames[0].size();

  // repeatability errors for every (keypoint, frame >= 1) pair
  std::vector<double> errors;
  errors.reserve(static_cast<std::size_t>(k) * (frames - 1));

  // composed map frame 0 -> frame t
  std::vector<std::int32_t> composed(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) composed[static_cast<std::size_t>(i)] = static_cast<std::int32_t>(i);

  for (std::size_t t = 1; t < frames; ++t) {
    const CorrespondenceMap& step = (*window.correspondences)[t - 1];
    check_correspondence(step, n);
    for (auto& idx : composed) idx = step[static_cast<std::size_t>(idx)];

    // reference: frame-0 probabilities re-expected over frame-t coordinates
    PointMatrix transferred(n, 3);
    for (Eigen::Index m = 0; m < n; ++m) {
      transferred.row(m) = window.frames[t].points.row(composed[static_cast<std::size_t>(m)]);
    }
    const Eigen::Matrix<double, Eigen::Dynamic, 3> reference = ws[0].w * transferred;
    const Eigen::Matrix<double, Eigen::Dynamic, 3> predicted = ws[t].w * window.frames[t].points;
    for (Eigen::Index i = 0; i < k; ++i) {
      errors.push_back((reference.row(i) - predicted.row(i)).norm());
    }
  }

  PckCurve curve;
  for (double tau : taus) {
    long below = 0;
    for (double e : errors) below += e < tau ? 1 : 0;
    curve.taus.push_back(tau);
    curve.percents.push_back(100.0 * static_cast<double>(below) / static_cast<double>(errors.size()));
  }
  return curve;
}

double inclusivity(const KeypointSet& kps, const PointCloud& cloud, double delta) {
  if (cloud.size() == 0) throw Error(Errc::empty_cloud, "inclusivity needs a non-empty cloud");
  if (kps.size() == 0) throw Error(Errc::too_few_keypoints, "inclusivity needs keypoints");
  long close = 0;
  for (Eigen::Index i = 0; i < kps.size(); ++i) {
    double best_d2 = std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < cloud.size(); ++j) {
      best_d2 = std::min(best_d2, (kps.positions.row(i) - cloud.points.row(j)).squaredNorm());
    }
    close += std::sqrt(best_d2) <= delta ? 1 : 0;
  }
  return 100.0 * static_cast<double>(close) / static_cast<double>(kps.size());
}

double coverage_metric(const KeypointSet& kps, const PointCloud& cloud) {
  if (kps.size() < 2) throw Error(Errc::too_few_keypoints, "coverage needs K >= 2");
  if (cloud.size() == 0) throw Error(Errc::empty_cloud, "coverage needs a non-empty cloud");
  constexpr double kPad = 1e-6;  // per axis, against degenerate boxes
  const Aabb kp_box = bounding_box(kps.positions);
  const Aabb cloud_box = bounding_box(cloud.points);
  const double kp_vol = (kp_box.extents().array() + kPad).prod();
  const double cloud_vol = (cloud_box.extents().array() + kPad).prod();
  return 100.0 * std::min(1.0, kp_vol / cloud_vol);
}

double gd_err(std::span<const ProbabilityMatrix> ws, std::span<const GeodesicMatrix> ds) {
  if (ws.size() < 2) throw Error(Errc::too_few_frames, "gd_err needs T >= 2");
  if (ds.size() != ws.size()) throw Error(Errc::shape_mismatch, "need one geodesic matrix per frame");
  const Eigen::Index k = ws[0].keypoints();
  if (k < 2) return 0.0;  // no off-diagonal entries

  std::vector<Eigen::MatrixXd> g(ws.size());
  for (std::size_t t = 0; t < ws.size(); ++t) {
    if (ws[t].points() != ds[t].size()) {
      throw Error(Errc::shape_mismatch, "W columns and D size disagree at frame " + std::to_string(t));
    }
    g[t] = ws[t].w * ds[t].d * ws[t].w.transpose();
  }

  const double off_diag = static_cast<double>(k) * static_cast<double>(k - 1);
  double sum = 0.0;
  for (std::size_t t = 0; t + 1 < ws.size(); ++t) {
    Eigen::MatrixXd diff = (g[t] - g[t + 1]).cwiseAbs();
    diff.diagonal().setZero();
    sum += diff.sum() / off_diag;
  }
  return sum / static_cast<double>(ws.size() - 1);
}

EvalProtocol parse_protocol(std::string_view text) {
  EvalProtocol protocol;
  if (text == "clean") return protocol;
  const auto colon = text.find(':');
  const std::string_view head = text.substr(0, colon);
  const std::string_view arg = colon == std::string_view::npos ? "" : text.substr(colon + 1);
  if (head == "noise") {
    protocol.kind = EvalProtocol::Kind::noise;
    try {
      protocol.noise_variance = std::stod(std::string(arg));
    } catch (const std::exception&) {
      throw Error(Errc::usage, "noise protocol needs a variance, e.g. noise:0.02");
    }
    if (protocol.noise_variance < 0) throw Error(Errc::usage, "noise variance must be >= 0");
    return protocol;
  }
  if (head == "fps") {
    protocol.kind = EvalProtocol::Kind::fps;
    int ratio = 0;
    std::string_view digits = arg;
    if (!digits.empty() && (digits.front() == 'x' || digits.front() == 'X')) digits.remove_prefix(1);
    const auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), ratio);
    if (ec != std::errc() || ptr != digits.data() + digits.size() || ratio < 1) {
      throw Error(Errc::usage, "fps protocol needs a ratio >= 1, e.g. fps:4");
    }
    protocol.fps_ratio = ratio;
    return protocol;
  }
  throw Error(Errc::usage, "unknown protocol '" + std::string(text) + "' (clean | noise:VAR | fps:RATIO)");
}

std::string to_string(const EvalProtocol& protocol) {
  switch (protocol.kind) {
    case EvalProtocol::Kind::clean: return "clean";
    case EvalProtocol::Kind::noise: {
      std::ostringstream s;
      s << "noise:" << protocol.noise_variance;
      return s.str();
    }
    case EvalProtocol::Kind::fps: return "fps:" + std::to_string(protocol.fps_ratio);
  }
  return "clean";
}

namespace {

// geodesic matrix for one evaluation frame; connectivity fallback mirrors the
// preprocess CLI (k+2, three attempts)
GeodesicMatrix eval_geodesics(const PointCloud& cloud, int k, unsigned jobs) {
  int attempt_k = k;
  for (int attempt = 0;; ++attempt) {
    try {
      return shortest_paths(build_knn_graph(cloud, attempt_k), jobs);
    } catch (const Error& e) {
      if (e.code() != Errc::disconnected_graph || attempt >= 3) throw;
      attempt_k += 2;
    }
  }
}

}  // namespace

MetricsReport evaluate(const ModelParams& params, const SequenceManifest& manifest,
                       const EvalProtocol& protocol, const EvalOptions& opts) {
  SequenceWindow sequence = load_sequence(manifest);
  const std::size_t frames = sequence.frames.size();
  if (frames < 2) throw Error(Errc::too_few_frames, "evaluation needs T >= 2 frames");

  MetricsReport report;
  report.protocol = to_string(protocol);
  report.noise_variance = protocol.noise_variance;
  report.fps_ratio = protocol.fps_ratio;
  report.inclusivity_delta = opts.inclusivity_delta;
  report.seed = opts.seed;

  // perturbation; fps:1 and noise:0 are exact no-ops so the reports match the
  // clean protocol bit for bit
  if (protocol.kind == EvalProtocol::Kind::noise && protocol.noise_variance > 0.0) {
    for (std::size_t t = 0; t < frames; ++t) {
      sequence.frames[t] =
          add_gaussian_noise(sequence.frames[t], protocol.noise_variance, opts.seed + t);
    }
  } else if (protocol.kind == EvalProtocol::Kind::fps && protocol.fps_ratio > 1) {
    const Eigen::Index m = sequence.frames[0].size() / protocol.fps_ratio;
    if (m < params.k) {
      throw Error(Errc::precondition, "fps ratio leaves fewer points than keypoints");
    }
    for (std::size_t t = 0; t < frames; ++t) {
      sequence.frames[t] = fps_downsample(sequence.frames[t], m, 0);
    }
    sequence.correspondences.reset();
    report.notes.push_back("pck omitted: fps resampling breaks point-index correspondences");
  }

  // per-frame inference
  std::vector<InferenceResult> inf(frames);
  parallel_for(frames, opts.jobs, [&](std::size_t begin, std::size_t end) {
    for (std::size_t t = begin; t < end; ++t) {
      inf[t] = infer(params, sequence.frames[t], opts.renormalize);
    }
  });

  std::vector<KeypointSet> kps(frames);
  std::vector<ProbabilityMatrix> ws(frames);
  for (std::size_t t = 0; t < frames; ++t) {
    kps[t] = inf[t].keypoints;
    ws[t] = inf[t].w;
  }

  double incl_sum = 0.0;
  double cov_sum = 0.0;
  double rec_sum = 0.0;
  for (std::size_t t = 0; t < frames; ++t) {
    incl_sum += inclusivity(kps[t], sequence.frames[t], opts.inclusivity_delta);
    cov_sum += coverage_metric(kps[t], sequence.frames[t]);
    rec_sum += chamfer(inf[t].network_input, inf[t].reconstruction).value;
  }
  report.inclusivity = incl_sum / static_cast<double>(frames);
  report.coverage = cov_sum / static_cast<double>(frames);
  report.recon_err = rec_sum / static_cast<double>(frames);
  report.t_con = t_con(kps);

  if (sequence.correspondences) {
    report.pck = pck(sequence, ws, opts.pck_taus);
  } else if (protocol.kind != EvalProtocol::Kind::fps) {
    report.notes.push_back("pck omitted: manifest carries no correspondences");
  }

  std::vector<GeodesicMatrix> ds(frames);
  parallel_for(frames, opts.jobs, [&](std::size_t begin, std::size_t end) {
    for (std::size_t t = begin; t < end; ++t) {
      ds[t] = eval_geodesics(sequence.frames[t], opts.knn_k, 1);
    }
  });
  report.gd_err = gd_err(ws, ds);
  if (params.k < 2) report.notes.push_back("gd_err degenerate: K < 2 leaves no off-diagonal entries");

  return report;
}

std::string report_to_json(const MetricsReport& report) {
  nlohmann::json doc;
  doc["protocol"] = report.protocol;
  doc["noise_variance"] = report.noise_variance;
  doc["fps_ratio"] = report.fps_ratio;
  doc["inclusivity_delta"] = report.inclusivity_delta;
  doc["seed"] = report.seed;
  doc["inclusivity"] = report.inclusivity;
  doc["coverage"] = report.coverage;
  doc["t_con"] = report.t_con;
  doc["recon_err"] = report.recon_err;
  doc["gd_err"] = report.gd_err;
  doc["pck"] = nlohmann::json::array();
  for (std::size_t i = 0; i < report.pck.taus.size(); ++i) {
    doc["pck"].push_back({{"tau", report.pck.taus[i]}, {"percent", report.pck.percents[i]}});
  }
  doc["notes"] = report.notes;
  return doc.dump(2);
}

void write_report(const MetricsReport& report, const std::filesystem::path& file) {
  std::ofstream out(file);
  if (!out) throw Error(Errc::io, "cannot write " + file.string());
  out << report_to_json(report) << "\n";
  if (!out) throw Error(Errc::io, "short write to " + file.string());
}

void write_pck_csv(const PckCurve& curve, const std::filesystem::path& file) {
  std::ofstream out(file);
  if (!out) throw Error(Errc::io, "cannot write " + file.string());
  out << "tau,pck\n";
  for (std::size_t i = 0; i < curve.taus.size(); ++i) {
    out << curve.taus[i] << "," << curve.percents[i] << "\n";
  }
  if (!out) throw Error(Errc::io, "short write to " + file.string());
}

}  // namespace geokp
