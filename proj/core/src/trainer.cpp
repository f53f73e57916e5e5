// Copyright 2026 The geokp Authors
// SPDX-License-Identifier: Apache-2.0

#include "geokp/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include <json.hpp>

#include "geokp/parallel.hpp"

namespace geokp {

namespace {

double json_number(const nlohmann::json& doc, const char* key, double fallback) {
  return doc.contains(key) ? doc[key].get<double>() : fallback;
}

void append_csv_row(std::FILE* csv, int epoch, const LossBreakdown& bd, double val_total) {
  std::fprintf(csv, "%d,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n", epoch, bd.rec, bd.cov, bd.surf,
               bd.geo, bd.smt, bd.total, val_total);
}

const char* non_finite_term(const LossBreakdown& bd) {
  if (!std::isfinite(bd.rec)) return "l_rec";
  if (!std::isfinite(bd.cov)) return "l_cov";
  if (!std::isfinite(bd.surf)) return "l_surf";
  if (!std::isfinite(bd.geo)) return "l_geo";
  if (!std::isfinite(bd.smt)) return "l_smt";
  if (!std::isfinite(bd.total)) return "total";
  return nullptr;
}

struct WindowEval {
  LossBreakdown bd;
  ModelTensors grads;
};

// forward every frame, assemble the window loss, and (optionally) chain the
// gradients back to the parameters
WindowEval eval_window(const ModelParams& params, const SequenceWindow& window,
                       std::span<const GeodesicMatrix> ds, const LossWeights& weights,
                       bool ordered_pairs, bool with_grads) {
  const std::size_t frames = window.frames.size();
  std::vector<ForwardResult> fw;
  fw.reserve(frames);
  std::vector<ProbabilityMatrix> ws(frames);
  std::vector<PointCloud> recons(frames);
  for (std::size_t t = 0; t < frames; ++t) {
    fw.push_back(forward(params, window.frames[t]));
    ws[t] = fw[t].w;
    recons[t] = fw[t].reconstruction;
  }

  TotalLossResult loss = total_loss(window, ws, ds, recons, weights, ordered_pairs);

  WindowEval eval;
  eval.bd = loss.breakdown;
  if (with_grads) {
    eval.grads = zeros_like(params);
    for (std::size_t t = 0; t < frames; ++t) {
      const GradPoints no_recon_grad;
      const ModelTensors g =
          backward(params, fw[t].cache, loss.grad_w[t], loss.grad_keypoints[t],
                   weights.rec != 0.0 ? loss.grad_recon[t] : no_recon_grad);
      for (auto member : kTensorMembers) (eval.grads.*member) += (g.*member);
    }
  }
  return eval;
}

}  // namespace

TrainConfig train_config_from_string(const std::string& text, const std::filesystem::path& base_dir) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::io, std::string("config: ") + e.what());
  }

  TrainConfig c;
  c.k_keypoints = static_cast<int>(json_number(doc, "k_keypoints", c.k_keypoints));
  c.m_recon = static_cast<int>(json_number(doc, "m_recon", c.m_recon));
  c.t_window = static_cast<int>(json_number(doc, "t_window", c.t_window));
  c.stride = static_cast<int>(json_number(doc, "stride", c.stride));
  c.batch_windows = static_cast<int>(json_number(doc, "batch_windows", c.batch_windows));
  c.epochs = static_cast<int>(json_number(doc, "epochs", c.epochs));
  c.lr = json_number(doc, "lr", c.lr);
  c.ordered_pairs = doc.contains("ordered_pairs") ? doc["ordered_pairs"].get<bool>() : c.ordered_pairs;
  c.seed = doc.contains("seed") ? doc["seed"].get<std::uint64_t>() : c.seed;
  c.knn_k = static_cast<int>(json_number(doc, "knn_k", c.knn_k));
  c.n_points = static_cast<int>(json_number(doc, "n_points", c.n_points));
  c.jobs = static_cast<unsigned>(json_number(doc, "jobs", c.jobs));

  if (doc.contains("weights")) {
    const auto& w = doc["weights"];
    c.weights.rec = json_number(w, "rec", c.weights.rec);
    c.weights.cov = json_number(w, "cov", c.weights.cov);
    c.weights.surf = json_number(w, "surf", c.weights.surf);
    c.weights.geo = json_number(w, "geo", c.weights.geo);
    c.weights.smt = json_number(w, "smt", c.weights.smt);
    c.weights.epsilon = json_number(w, "epsilon", c.weights.epsilon);
  }
  if (doc.contains("ablate")) {
    const auto& a = doc["ablate"];
    c.ablate_rec = a.value("rec", false);
    c.ablate_cov = a.value("cov", false);
    c.ablate_surf = a.value("surf", false);
    c.ablate_geo = a.value("geo", false);
    c.ablate_smt = a.value("smt", false);
  }
  for (const char* key : {"train_manifests", "val_manifests"}) {
    if (!doc.contains(key)) continue;
    auto& target = std::string(key) == "train_manifests" ? c.train_manifests : c.val_manifests;
    for (const auto& entry : doc[key]) target.push_back(base_dir / entry.get<std::string>());
  }
  if (doc.contains("geodesic_dir")) c.geodesic_dir = base_dir / doc["geodesic_dir"].get<std::string>();
  if (doc.contains("out_dir")) c.out_dir = base_dir / doc["out_dir"].get<std::string>();
  return c;
}

TrainConfig train_config_from_file(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw Error(Errc::io, "cannot open " + file.string());
  std::ostringstream text;
  text << in.rdbuf();
  return train_config_from_string(text.str(), file.parent_path());
}

LossWeights effective_weights(const TrainConfig& config) {
  LossWeights w = config.weights;
  if (config.ablate_rec) w.rec = 0.0;
  if (config.ablate_cov) w.cov = 0.0;
  if (config.ablate_surf) w.surf = 0.0;
  if (config.ablate_geo) w.geo = 0.0;
  if (config.ablate_smt) w.smt = 0.0;
  return w;
}

std::filesystem::path geodesic_cache_path(const std::filesystem::path& geodesic_dir,
                                          const std::filesystem::path& frame_path) {
  return geodesic_dir / (frame_path.stem().string() + ".gkpd");
}

const GeodesicMatrix& LoadedSequence::geodesics(std::size_t t) {
  if (ds[t].size() == 0) {
    if (!std::filesystem::exists(cache_paths[t])) {
      throw Error(Errc::missing_geodesic_cache, cache_paths[t].string());
    }
    ds[t] = cache_read(cache_paths[t]);
    if (ds[t].size() != full.frames[t].size()) {
      throw Error(Errc::size_mismatch, cache_paths[t].string() + ": cache N differs from frame N");
    }
  }
  return ds[t];
}

SequenceWindow WindowSet::window(std::size_t i) const {
  const int begin = begins[i];
  SequenceWindow w;
  w.frames.assign(sequence.full.frames.begin() + begin,
                  sequence.full.frames.begin() + begin + t_window);
  if (sequence.full.correspondences) {
    w.correspondences = std::vector<CorrespondenceMap>(
        sequence.full.correspondences->begin() + begin,
        sequence.full.correspondences->begin() + begin + t_window - 1);
  }
  return w;
}

WindowSet make_windows(const SequenceManifest& manifest, int t_window, int stride,
                       const std::filesystem::path& geodesic_dir, bool require_caches) {
  if (t_window < 2) throw Error(Errc::precondition, "t_window must be >= 2");
  if (stride < 1) throw Error(Errc::precondition, "stride must be >= 1");
  const int frames = static_cast<int>(manifest.frame_paths.size());
  if (frames < t_window) {
    throw Error(Errc::too_short_sequence, "sequence has " + std::to_string(frames) +
                                              " frames, window needs " + std::to_string(t_window));
  }

  WindowSet set;
  set.t_window = t_window;
  set.sequence.full = load_sequence(manifest);
  set.sequence.ds.resize(static_cast<std::size_t>(frames));
  for (const auto& frame_path : manifest.frame_paths) {
    set.sequence.cache_paths.push_back(geodesic_cache_path(geodesic_dir, frame_path));
  }
  if (require_caches) {
    for (const auto& cache : set.sequence.cache_paths) {
      if (!std::filesystem::exists(cache)) {
        throw Error(Errc::missing_geodesic_cache, cache.string());
      }
    }
  }
  for (int begin = 0; begin + t_window <= frames; begin += stride) {
    set.begins.push_back(begin);
  }
  return set;
}

TrainResult train(const TrainConfig& config) {
  if (config.k_keypoints < 2 || config.m_recon < 1 || config.batch_windows < 1 ||
      config.epochs < 0 || config.t_window < 2) {
    throw Error(Errc::precondition, "invalid training configuration");
  }
  const LossWeights weights = effective_weights(config);
  if (weights.rec < 0 || weights.cov < 0 || weights.surf < 0 || weights.geo < 0 || weights.smt < 0) {
    throw Error(Errc::precondition, "loss weights must be non-negative");
  }
  const bool needs_caches = weights.geo != 0.0;

  struct Partition {
    std::vector<WindowSet> sets;
    std::vector<std::pair<std::size_t, std::size_t>> index;  // (set, window)
    std::vector<SequenceWindow> windows;                     // materialized
  };
  auto load_partition = [&](const std::vector<std::filesystem::path>& manifests) {
    Partition p;
    for (const auto& path : manifests) {
      WindowSet set = make_windows(read_manifest(path), config.t_window, config.stride,
                                   config.geodesic_dir, needs_caches);
      if (config.n_points > 0 && set.sequence.full.frames.front().size() != config.n_points) {
        throw Error(Errc::shape_mismatch,
                    path.string() + ": frames have N=" +
                        std::to_string(set.sequence.full.frames.front().size()) +
                        ", config expects n_points=" + std::to_string(config.n_points));
      }
      p.sets.push_back(std::move(set));
    }
    for (std::size_t s = 0; s < p.sets.size(); ++s) {
      for (std::size_t w = 0; w < p.sets[s].count(); ++w) {
        p.index.emplace_back(s, w);
        p.windows.push_back(p.sets[s].window(w));
      }
    }
    if (needs_caches) {
      // read every cache up front; the lazy per-frame path stays untouched
      // whenever the geodesic term is disabled
      for (auto& set : p.sets) {
        for (std::size_t t = 0; t < set.sequence.full.frames.size(); ++t) set.sequence.geodesics(t);
      }
    }
    return p;
  };

  Partition train_part = load_partition(config.train_manifests);
  Partition val_part = load_partition(config.val_manifests);
  if (train_part.windows.empty()) {
    throw Error(Errc::precondition, "no training windows");
  }

  std::filesystem::create_directories(config.out_dir);
  const auto csv_path = config.out_dir / "log.csv";
  const auto best_path = config.out_dir / "best.gkpm";
  const auto last_path = config.out_dir / "last.gkpm";

  std::FILE* csv = std::fopen(csv_path.string().c_str(), "w");
  if (!csv) throw Error(Errc::io, "cannot write " + csv_path.string());
  std::fputs("epoch,l_rec,l_cov,l_surf,l_geo,l_smt,total,val_total\n", csv);

  ModelParams params = init_params(config.k_keypoints, config.m_recon, config.seed);
  AdamState adam = make_adam_state(params, config.lr);
  std::mt19937_64 shuffle_rng(config.seed ^ 0x9e3779b97f4a7c15ULL);

  auto window_ds = [&](Partition& p, std::size_t i) -> std::span<const GeodesicMatrix> {
    if (!needs_caches) return {};
    const auto [s, w] = p.index[i];
    const WindowSet& set = p.sets[s];
    return {set.sequence.ds.data() + set.begins[w], static_cast<std::size_t>(set.t_window)};
  };

  auto mean_val_total = [&]() {
    if (val_part.windows.empty()) return std::numeric_limits<double>::quiet_NaN();
    std::vector<double> totals(val_part.windows.size());
    parallel_for(val_part.windows.size(), config.jobs, [&](std::size_t begin, std::size_t end) {
      for (std::size_t i = begin; i < end; ++i) {
        totals[i] = eval_window(params, val_part.windows[i], window_ds(val_part, i), weights,
                                config.ordered_pairs, false)
                        .bd.total;
      }
    });
    return std::accumulate(totals.begin(), totals.end(), 0.0) / static_cast<double>(totals.size());
  };

  TrainResult result;
  result.log_csv = csv_path;
  result.best_checkpoint = best_path;
  result.last_checkpoint = last_path;
  double best_val = std::numeric_limits<double>::infinity();
  save_checkpoint(params, best_path);  // epoch-0 fallback when epochs == 0

  std::vector<std::size_t> order(train_part.windows.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    LossBreakdown epoch_sum;
    for (std::size_t at = 0; at < order.size(); at += static_cast<std::size_t>(config.batch_windows)) {
      const std::size_t batch_end = std::min(order.size(), at + static_cast<std::size_t>(config.batch_windows));
      const std::size_t batch_size = batch_end - at;

      std::vector<WindowEval> evals(batch_size);
      parallel_for(batch_size, config.jobs, [&](std::size_t begin, std::size_t end) {
        for (std::size_t b = begin; b < end; ++b) {
          const std::size_t i = order[at + b];
          evals[b] = eval_window(params, train_part.windows[i], window_ds(train_part, i), weights,
                                 config.ordered_pairs, true);
        }
      });

      for (std::size_t b = 0; b < batch_size; ++b) {
        if (const char* term = non_finite_term(evals[b].bd)) {
          std::fclose(csv);
          throw Error(Errc::non_finite_loss,
                      std::string(term) + " is non-finite (epoch " + std::to_string(epoch) +
                          ", window " + std::to_string(order[at + b]) + ")");
        }
        epoch_sum.rec += evals[b].bd.rec;
        epoch_sum.cov += evals[b].bd.cov;
        epoch_sum.surf += evals[b].bd.surf;
        epoch_sum.geo += evals[b].bd.geo;
        epoch_sum.smt += evals[b].bd.smt;
        epoch_sum.total += evals[b].bd.total;
      }

      ModelTensors batch_grads = evals[0].grads;
      for (std::size_t b = 1; b < batch_size; ++b) {
        for (auto member : kTensorMembers) (batch_grads.*member) += (evals[b].grads.*member);
      }
      const double inv = 1.0 / static_cast<double>(batch_size);
      for (auto member : kTensorMembers) (batch_grads.*member) *= inv;
      adam_step(params, batch_grads, adam);
    }

    const double inv_windows = 1.0 / static_cast<double>(order.size());
    LossBreakdown epoch_mean{epoch_sum.rec * inv_windows, epoch_sum.cov * inv_windows,
                             epoch_sum.surf * inv_windows, epoch_sum.geo * inv_windows,
                             epoch_sum.smt * inv_windows, epoch_sum.total * inv_windows};
    double val_total = mean_val_total();
    if (std::isnan(val_total)) val_total = epoch_mean.total;  // no validation windows

    append_csv_row(csv, epoch, epoch_mean, val_total);
    if (epoch == 1) result.first_epoch_total = epoch_mean.total;
    result.last_epoch_total = epoch_mean.total;

    if (val_total < best_val) {
      best_val = val_total;
      save_checkpoint(params, best_path);
    }
  }

  result.epochs_run = config.epochs;
  result.best_val_total = best_val;
  save_checkpoint(params, last_path);
  if (std::fclose(csv) != 0) throw Error(Errc::io, "cannot finish " + csv_path.string());
  return result;
}

InferenceResult infer(const ModelParams& params, const PointCloud& cloud, bool renormalize) {
  if (cloud.size() < params.k) {
    throw Error(Errc::precondition, "inference needs at least K=" + std::to_string(params.k) +
                                        " points, got " + std::to_string(cloud.size()));
  }
  InferenceResult result;
  result.network_input = renormalize ? normalize(cloud) : cloud;
  ForwardResult fw = forward(params, result.network_input);
  result.w = std::move(fw.w);
  result.reconstruction = std::move(fw.reconstruction);
  // convex combinations commute with the normalization, so the original-frame
  // keypoints are just W applied to the original coordinates
  result.keypoints.positions = result.w.w * cloud.points;
  return result;
}

InferenceResult infer_checkpoint(const std::filesystem::path& checkpoint, const PointCloud& cloud,
                                 bool renormalize) {
  const ModelParams params = load_checkpoint(checkpoint);
  return infer(params, cloud, renormalize);
}

}  // namespace geokp
