// Copyright 2026 The HALT Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "halt/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "halt/errors.hpp"
#include "halt/io_util.hpp"
#include "halt/parallel.hpp"
#include "halt/rng.hpp"

namespace halt {

static_assert(std::endian::native == std::endian::little,
              "weight files are little-endian; big-endian hosts unsupported");

namespace {

constexpr double kLnEps = 1e-5;       // LayerNorm variance epsilon
constexpr int kGradChunk = 64;        // examples per gradient-accumulation chunk
constexpr std::uint32_t kWeightFormatVersion = 1;
constexpr char kMagic[4] = {'H', 'A', 'L', 'T'};

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double gelu(double x) {
  return 0.5 * x * (1.0 + std::erf(x * 0.70710678118654752440));
}

inline double gelu_grad(double x) {
  const double phi_big = 0.5 * (1.0 + std::erf(x * 0.70710678118654752440));
  const double phi_small =
      0.39894228040143267794 * std::exp(-0.5 * x * x);  // 1/sqrt(2*pi)
  return phi_big + x * phi_small;
}

std::string gru_param_name(int layer, bool forward_dir, const char* tensor) {
  return "gru.l" + std::to_string(layer) + (forward_dir ? ".fwd." : ".bwd.") +
         tensor;
}

}  // namespace

int pooling_count(double top_q, int length) {
  // Epsilon keeps exact integer products (e.g. q*length == 3) from rounding
  // up through floating-point noise.
  const int k = static_cast<int>(std::ceil(top_q * length - 1e-9));
  return std::max(1, std::min(k, length));
}

void HaltConfig::validate() const {
  if (input_dim < 1 || proj_dim < 1 || hidden_dim < 1) {
    throw ConfigError("model dims must be >= 1");
  }
  if (num_layers < 1) throw ConfigError("num_layers must be >= 1");
  if (!(top_q > 0.0 && top_q <= 1.0)) throw ConfigError("top_q must be in (0, 1]");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
    throw ConfigError("dropout_rate must be in [0, 1)");
  }
}

Batch Batch::from_sequence_ptrs(const std::vector<const FeatureSequence*>& seqs) {
  Batch batch;
  batch.max_len = 0;
  for (const auto* s : seqs) {
    batch.max_len = std::max(batch.max_len, s->length());
  }
  for (const auto* s : seqs) {
    Eigen::MatrixXd padded =
        Eigen::MatrixXd::Zero(batch.max_len, s->rows.cols());
    padded.topRows(s->length()) = s->rows;
    batch.features.push_back(std::move(padded));
    batch.lengths.push_back(s->length());
    batch.labels.push_back(s->label);
  }
  return batch;
}

Batch Batch::from_sequences(const std::vector<FeatureSequence>& seqs) {
  std::vector<const FeatureSequence*> ptrs;
  ptrs.reserve(seqs.size());
  for (const auto& s : seqs) ptrs.push_back(&s);
  return from_sequence_ptrs(ptrs);
}

void Batch::validate() const {
  if (features.empty()) throw ValidationError("batch is empty");
  if (lengths.size() != features.size() || labels.size() != features.size()) {
    throw ValidationError("batch field sizes disagree");
  }
  for (std::size_t b = 0; b < features.size(); ++b) {
    if (lengths[b] < 1) {
      throw ValidationError("batch example " + std::to_string(b) +
                            " has length 0");
    }
    if (features[b].rows() < lengths[b]) {
      throw ValidationError("batch example " + std::to_string(b) +
                            " shorter than its stated length");
    }
    if (labels[b] != 0 && labels[b] != 1) {
      throw ValidationError("batch labels must be binary");
    }
  }
}

namespace {

struct DirCache {
  Eigen::MatrixXd z, r, n, c;  // T x H gate activations; c is the recurrent
                               // candidate pre-term the reset gate multiplies
  Eigen::MatrixXd h;           // T x H hidden states in sequence-time order
};

struct LayerCache {
  Eigen::MatrixXd input;    // T x D_in (post-dropout output of layer below)
  DirCache fwd, bwd;
  Eigen::MatrixXd concat;   // T x D_out, pre-dropout
  Eigen::MatrixXd dropout;  // T x D_out scaled keep mask; empty if unused
};

struct ExampleCache {
  Eigen::MatrixXd x_masked;  // T x F
  Eigen::MatrixXd xhat;      // LayerNorm normalized input
  Eigen::VectorXd inv_std;   // per-row 1/sqrt(var + eps)
  Eigen::MatrixXd mlp_pre;   // T x P, pre-GELU
  Eigen::MatrixXd mlp_act;   // T x P, post-GELU
  Eigen::MatrixXd mlp_out;   // T x P
  std::vector<LayerCache> layers;
  std::vector<int> pooled_rows;
  Eigen::VectorXd pooled;    // D
  Eigen::VectorXd pooled_hat;  // out-LN cache (empty when out_norm off)
  double pooled_inv_std = 0.0;
  double logit = 0.0;
};

}  // namespace

struct BatchCache {
  std::vector<ExampleCache> examples;
  bool training = false;
};

namespace {

class Network {
 public:
  Network(const HaltConfig& config, const ParamSet& params,
          std::uint64_t dropout_seed, std::uint64_t dropout_step)
      : cfg_(config),
        params_(params),
        dropout_seed_(dropout_seed),
        dropout_step_(dropout_step) {}

  double forward_example(const Eigen::MatrixXd& padded, int length,
                         int example_index, bool training,
                         ExampleCache& cache) const {
    const int T = length;
    const int F = cfg_.input_dim;
    const int D = cfg_.encoder_out_dim();

    if (padded.cols() != F) {
      throw ConfigError("feature width " + std::to_string(padded.cols()) +
                        " does not match model input_dim " + std::to_string(F));
    }

    // Column mask, then LayerNorm per timestep.
    cache.x_masked = padded.topRows(T);
    for (int c = 0; c < F; ++c) {
      if (!cfg_.column_mask[static_cast<std::size_t>(c)]) {
        cache.x_masked.col(c).setZero();
      }
    }

    cache.xhat.resize(T, F);
    cache.inv_std.resize(T);
    Eigen::MatrixXd ln_out(T, F);
    const Eigen::VectorXd& gain = params_.at("ln_in.gain").col(0);
    const Eigen::VectorXd& bias = params_.at("ln_in.bias").col(0);
    for (int t = 0; t < T; ++t) {
      const double mu = cache.x_masked.row(t).mean();
      const Eigen::RowVectorXd centered =
          cache.x_masked.row(t).array() - mu;
      const double var = centered.squaredNorm() / F;
      const double inv_std = 1.0 / std::sqrt(var + kLnEps);
      cache.inv_std(t) = inv_std;
      cache.xhat.row(t) = centered * inv_std;
      ln_out.row(t) = (cache.xhat.row(t).array() * gain.transpose().array()) +
                      bias.transpose().array();
    }
    check_finite(ln_out, "input_layernorm", example_index);

    // Projection MLP with GELU.
    cache.mlp_pre = ln_out * params_.at("proj.w1").transpose();
    cache.mlp_pre.rowwise() += params_.at("proj.b1").col(0).transpose();
    cache.mlp_act = cache.mlp_pre.unaryExpr([](double v) { return gelu(v); });
    cache.mlp_out = cache.mlp_act * params_.at("proj.w2").transpose();
    cache.mlp_out.rowwise() += params_.at("proj.b2").col(0).transpose();
    check_finite(cache.mlp_out, "projection_mlp", example_index);

    // Recurrent stack.
    cache.layers.resize(static_cast<std::size_t>(cfg_.num_layers));
    const Eigen::MatrixXd* layer_input = &cache.mlp_out;
    for (int l = 0; l < cfg_.num_layers; ++l) {
      LayerCache& lc = cache.layers[static_cast<std::size_t>(l)];
      lc.input = *layer_input;
      lc.concat.resize(T, D);
      run_direction(l, true, lc.input, lc.fwd);
      lc.concat.leftCols(cfg_.hidden_dim) = lc.fwd.h;
      if (cfg_.bidirectional) {
        run_direction(l, false, lc.input, lc.bwd);
        lc.concat.rightCols(cfg_.hidden_dim) = lc.bwd.h;
      }
      check_finite(lc.concat, "gru_layer_" + std::to_string(l), example_index);

      const bool wants_dropout =
          training && cfg_.dropout_rate > 0.0 && l + 1 < cfg_.num_layers;
      if (wants_dropout) {
        lc.dropout = draw_dropout_mask(T, D, example_index, l);
        lc.concat = lc.concat.cwiseProduct(lc.dropout);
      }
      layer_input = &lc.concat;
    }

    // Top-q pooling by hidden-state norm; ties go to the earlier timestep.
    const Eigen::MatrixXd& top = cache.layers.back().concat;
    std::vector<int> order(static_cast<std::size_t>(T));
    std::iota(order.begin(), order.end(), 0);
    Eigen::VectorXd scores(T);
    for (int t = 0; t < T; ++t) scores(t) = top.row(t).norm();
    std::sort(order.begin(), order.end(), [&](int a, int b) {
      if (scores(a) != scores(b)) return scores(a) > scores(b);
      return a < b;
    });
    const int K = pooling_count(cfg_.top_q, T);
    cache.pooled_rows.assign(order.begin(), order.begin() + K);
    cache.pooled = Eigen::VectorXd::Zero(D);
    for (int row : cache.pooled_rows) cache.pooled += top.row(row).transpose();
    cache.pooled /= static_cast<double>(K);
    check_finite(cache.pooled, "pooling", example_index);

    // Head: optional LayerNorm, then affine to one logit.
    Eigen::VectorXd head_in = cache.pooled;
    if (cfg_.out_norm) {
      const double mu = cache.pooled.mean();
      Eigen::VectorXd centered = cache.pooled.array() - mu;
      const double var = centered.squaredNorm() / D;
      cache.pooled_inv_std = 1.0 / std::sqrt(var + kLnEps);
      cache.pooled_hat = centered * cache.pooled_inv_std;
      head_in =
          (cache.pooled_hat.array() * params_.at("out_ln.gain").col(0).array()) +
          params_.at("out_ln.bias").col(0).array();
    }
    const double logit =
        params_.at("head.w").row(0).dot(head_in) + params_.at("head.b")(0, 0);
    if (!std::isfinite(logit)) {
      throw NumericError("non-finite value at stage head (example " +
                         std::to_string(example_index) + ")");
    }
    cache.logit = logit;
    return logit;
  }

  // dlogit is dLoss/dlogit for this example. Parameter gradients accumulate
  // into grads; returns the gradient w.r.t. the raw (pre-mask) input rows.
  Eigen::MatrixXd backward_example(const ExampleCache& cache, double dlogit,
                                   ParamSet& grads) const {
    const int T = static_cast<int>(cache.x_masked.rows());
    const int F = cfg_.input_dim;
    const int D = cfg_.encoder_out_dim();
    const int H = cfg_.hidden_dim;

    // Head.
    Eigen::VectorXd dpooled;
    if (cfg_.out_norm) {
      const Eigen::VectorXd& gain = params_.at("out_ln.gain").col(0);
      Eigen::VectorXd dhead_in = params_.at("head.w").row(0).transpose() * dlogit;
      grads.at("out_ln.gain").col(0) +=
          (dhead_in.array() * cache.pooled_hat.array()).matrix();
      grads.at("out_ln.bias").col(0) += dhead_in;
      Eigen::VectorXd dxhat = (dhead_in.array() * gain.array()).matrix();
      const double mean_dxhat = dxhat.mean();
      const double mean_dxhat_xhat =
          (dxhat.array() * cache.pooled_hat.array()).mean();
      dpooled = cache.pooled_inv_std *
                (dxhat.array() - mean_dxhat -
                 cache.pooled_hat.array() * mean_dxhat_xhat)
                    .matrix();
      Eigen::VectorXd head_in =
          (cache.pooled_hat.array() * gain.array()).matrix() +
          params_.at("out_ln.bias").col(0);
      grads.at("head.w").row(0) += dlogit * head_in.transpose();
    } else {
      grads.at("head.w").row(0) += dlogit * cache.pooled.transpose();
      dpooled = params_.at("head.w").row(0).transpose() * dlogit;
    }
    grads.at("head.b")(0, 0) += dlogit;

    // Pooling: gradient splits evenly over the selected timesteps.
    const double K = static_cast<double>(cache.pooled_rows.size());
    Eigen::MatrixXd dconcat = Eigen::MatrixXd::Zero(T, D);
    for (int row : cache.pooled_rows) {
      dconcat.row(row) = dpooled.transpose() / K;
    }

    // Recurrent stack, top down.
    Eigen::MatrixXd dinput_below;
    for (int l = cfg_.num_layers - 1; l >= 0; --l) {
      const LayerCache& lc = cache.layers[static_cast<std::size_t>(l)];
      if (lc.dropout.size() > 0) {
        dconcat = dconcat.cwiseProduct(lc.dropout);
      }
      const int d_in = static_cast<int>(lc.input.cols());
      dinput_below = Eigen::MatrixXd::Zero(T, d_in);
      backward_direction(l, true, lc.input, lc.fwd, dconcat.leftCols(H),
                         dinput_below, grads);
      if (cfg_.bidirectional) {
        backward_direction(l, false, lc.input, lc.bwd, dconcat.rightCols(H),
                           dinput_below, grads);
      }
      dconcat = std::move(dinput_below);
    }

    // Projection MLP.
    const Eigen::MatrixXd& dmlp_out = dconcat;  // T x P
    grads.at("proj.w2") += dmlp_out.transpose() * cache.mlp_act;
    grads.at("proj.b2").col(0) += dmlp_out.colwise().sum().transpose();
    Eigen::MatrixXd dact = dmlp_out * params_.at("proj.w2");
    Eigen::MatrixXd dpre =
        dact.cwiseProduct(cache.mlp_pre.unaryExpr([](double v) {
          return gelu_grad(v);
        }));
    // Recompute the LN output this layer consumed.
    const Eigen::VectorXd& gain = params_.at("ln_in.gain").col(0);
    const Eigen::VectorXd& bias = params_.at("ln_in.bias").col(0);
    Eigen::MatrixXd ln_out =
        (cache.xhat.array().rowwise() * gain.transpose().array()).matrix();
    ln_out.rowwise() += bias.transpose();
    grads.at("proj.w1") += dpre.transpose() * ln_out;
    grads.at("proj.b1").col(0) += dpre.colwise().sum().transpose();
    Eigen::MatrixXd dln_out = dpre * params_.at("proj.w1");

    // Input LayerNorm.
    Eigen::MatrixXd dx_masked(T, F);
    for (int t = 0; t < T; ++t) {
      grads.at("ln_in.gain").col(0) +=
          (dln_out.row(t).array() * cache.xhat.row(t).array())
              .matrix()
              .transpose();
      grads.at("ln_in.bias").col(0) += dln_out.row(t).transpose();
      const Eigen::RowVectorXd dxhat =
          (dln_out.row(t).array() * gain.transpose().array()).matrix();
      const double mean_dxhat = dxhat.mean();
      const double mean_dxhat_xhat =
          (dxhat.array() * cache.xhat.row(t).array()).mean();
      dx_masked.row(t) =
          cache.inv_std(t) * (dxhat.array() - mean_dxhat -
                              cache.xhat.row(t).array() * mean_dxhat_xhat);
    }

    // Column mask: masked columns carry no gradient.
    for (int c = 0; c < F; ++c) {
      if (!cfg_.column_mask[static_cast<std::size_t>(c)]) {
        dx_masked.col(c).setZero();
      }
    }
    return dx_masked;
  }

 private:
  void check_finite(const Eigen::MatrixXd& m, const std::string& stage,
                    int example_index) const {
    if (!m.allFinite()) {
      throw NumericError("non-finite value at stage " + stage + " (example " +
                         std::to_string(example_index) + ")");
    }
  }

  Eigen::MatrixXd draw_dropout_mask(int T, int D, int example_index,
                                    int layer) const {
    const double keep = 1.0 - cfg_.dropout_rate;
    Rng rng(derive_seed(dropout_seed_, "dropout", dropout_step_,
                        static_cast<std::uint64_t>(example_index),
                        static_cast<std::uint64_t>(layer)));
    Eigen::MatrixXd mask(T, D);
    for (int t = 0; t < T; ++t) {
      for (int d = 0; d < D; ++d) {
        mask(t, d) = rng.bernoulli(keep) ? 1.0 / keep : 0.0;
      }
    }
    return mask;
  }

  // Standard GRU step, reset gate applied to the recurrent candidate term,
  // new state h = (1 - z) * h_prev + z * n.
  void run_direction(int layer, bool forward_dir, const Eigen::MatrixXd& input,
                     DirCache& dc) const {
    const int T = static_cast<int>(input.rows());
    const int H = cfg_.hidden_dim;
    const Eigen::MatrixXd& w_ih = params_.at(gru_param_name(layer, forward_dir, "w_ih"));
    const Eigen::MatrixXd& w_hh = params_.at(gru_param_name(layer, forward_dir, "w_hh"));
    const Eigen::VectorXd& b_ih = params_.at(gru_param_name(layer, forward_dir, "b_ih")).col(0);
    const Eigen::VectorXd& b_hh = params_.at(gru_param_name(layer, forward_dir, "b_hh")).col(0);

    Eigen::MatrixXd pre_ih = input * w_ih.transpose();  // T x 3H
    pre_ih.rowwise() += b_ih.transpose();

    dc.z.resize(T, H);
    dc.r.resize(T, H);
    dc.n.resize(T, H);
    dc.c.resize(T, H);
    dc.h.resize(T, H);

    Eigen::VectorXd h_prev = Eigen::VectorXd::Zero(H);
    for (int s = 0; s < T; ++s) {
      const int t = forward_dir ? s : T - 1 - s;
      const Eigen::VectorXd rec = w_hh * h_prev + b_hh;  // 3H
      const Eigen::ArrayXd a_z =
          pre_ih.row(t).segment(0, H).transpose().array() +
          rec.segment(0, H).array();
      const Eigen::ArrayXd a_r =
          pre_ih.row(t).segment(H, H).transpose().array() +
          rec.segment(H, H).array();
      const Eigen::ArrayXd z = a_z.unaryExpr([](double v) { return sigmoid(v); });
      const Eigen::ArrayXd r = a_r.unaryExpr([](double v) { return sigmoid(v); });
      const Eigen::ArrayXd c = rec.segment(2 * H, H).array();
      const Eigen::ArrayXd a_n =
          pre_ih.row(t).segment(2 * H, H).transpose().array() + r * c;
      const Eigen::ArrayXd n = a_n.tanh();
      const Eigen::ArrayXd h =
          (1.0 - z) * h_prev.array() + z * n;

      dc.z.row(t) = z.transpose();
      dc.r.row(t) = r.transpose();
      dc.n.row(t) = n.transpose();
      dc.c.row(t) = c.transpose();
      dc.h.row(t) = h.transpose();
      h_prev = h.matrix();
    }
  }

  void backward_direction(int layer, bool forward_dir,
                          const Eigen::MatrixXd& input, const DirCache& dc,
                          const Eigen::Ref<const Eigen::MatrixXd>& dout,
                          Eigen::MatrixXd& dinput, ParamSet& grads) const {
    const int T = static_cast<int>(input.rows());
    const int H = cfg_.hidden_dim;
    const Eigen::MatrixXd& w_ih = params_.at(gru_param_name(layer, forward_dir, "w_ih"));
    const Eigen::MatrixXd& w_hh = params_.at(gru_param_name(layer, forward_dir, "w_hh"));

    // Per-step pre-activation grads, batched into GEMMs afterwards.
    Eigen::MatrixXd d_acts(T, 3 * H);   // [da_z | da_r | da_n]
    Eigen::MatrixXd d_rec(T, 3 * H);    // grads of (w_hh h_prev + b_hh)
    Eigen::MatrixXd h_prev_all = Eigen::MatrixXd::Zero(T, H);
    for (int s = 0; s < T; ++s) {
      const int t = forward_dir ? s : T - 1 - s;
      if (s > 0) {
        const int t_prev = forward_dir ? s - 1 : T - s;
        h_prev_all.row(t) = dc.h.row(t_prev);
      }
    }

    Eigen::ArrayXd carry = Eigen::ArrayXd::Zero(H);
    for (int s = T - 1; s >= 0; --s) {
      const int t = forward_dir ? s : T - 1 - s;
      const Eigen::ArrayXd dh = dout.row(t).transpose().array() + carry;
      const Eigen::ArrayXd z = dc.z.row(t).transpose().array();
      const Eigen::ArrayXd r = dc.r.row(t).transpose().array();
      const Eigen::ArrayXd n = dc.n.row(t).transpose().array();
      const Eigen::ArrayXd c = dc.c.row(t).transpose().array();
      const Eigen::ArrayXd h_prev = h_prev_all.row(t).transpose().array();

      const Eigen::ArrayXd dz = dh * (n - h_prev);
      const Eigen::ArrayXd dn = dh * z;
      const Eigen::ArrayXd da_n = dn * (1.0 - n * n);
      const Eigen::ArrayXd dc_term = da_n * r;
      const Eigen::ArrayXd dr = da_n * c;
      const Eigen::ArrayXd da_z = dz * z * (1.0 - z);
      const Eigen::ArrayXd da_r = dr * r * (1.0 - r);

      d_acts.row(t).segment(0, H) = da_z.transpose();
      d_acts.row(t).segment(H, H) = da_r.transpose();
      d_acts.row(t).segment(2 * H, H) = da_n.transpose();
      d_rec.row(t).segment(0, H) = da_z.transpose();
      d_rec.row(t).segment(H, H) = da_r.transpose();
      d_rec.row(t).segment(2 * H, H) = dc_term.transpose();

      carry = dh * (1.0 - z) +
              (w_hh.transpose() * d_rec.row(t).transpose()).array();
    }

    grads.at(gru_param_name(layer, forward_dir, "w_ih")) +=
        d_acts.transpose() * input;
    grads.at(gru_param_name(layer, forward_dir, "w_hh")) +=
        d_rec.transpose() * h_prev_all;
    grads.at(gru_param_name(layer, forward_dir, "b_ih")).col(0) +=
        d_acts.colwise().sum().transpose();
    grads.at(gru_param_name(layer, forward_dir, "b_hh")).col(0) +=
        d_rec.colwise().sum().transpose();
    dinput += d_acts * w_ih;
  }

  const HaltConfig& cfg_;
  const ParamSet& params_;
  std::uint64_t dropout_seed_;
  std::uint64_t dropout_step_;
};

ParamSet build_params(const HaltConfig& cfg) {
  ParamSet p;
  p.add("ln_in.gain", cfg.input_dim, 1);
  p.add("ln_in.bias", cfg.input_dim, 1);
  p.add("proj.w1", cfg.proj_dim, cfg.input_dim);
  p.add("proj.b1", cfg.proj_dim, 1);
  p.add("proj.w2", cfg.proj_dim, cfg.proj_dim);
  p.add("proj.b2", cfg.proj_dim, 1);
  const int D = cfg.encoder_out_dim();
  for (int l = 0; l < cfg.num_layers; ++l) {
    const int in_dim = l == 0 ? cfg.proj_dim : D;
    for (bool dir : {true, false}) {
      if (!dir && !cfg.bidirectional) continue;
      p.add(gru_param_name(l, dir, "w_ih"), 3 * cfg.hidden_dim, in_dim);
      p.add(gru_param_name(l, dir, "w_hh"), 3 * cfg.hidden_dim, cfg.hidden_dim);
      p.add(gru_param_name(l, dir, "b_ih"), 3 * cfg.hidden_dim, 1);
      p.add(gru_param_name(l, dir, "b_hh"), 3 * cfg.hidden_dim, 1);
    }
  }
  if (cfg.out_norm) {
    p.add("out_ln.gain", D, 1);
    p.add("out_ln.bias", D, 1);
  }
  p.add("head.w", 1, D);
  p.add("head.b", 1, 1);
  return p;
}

}  // namespace

HaltModel HaltModel::init(const HaltConfig& config, std::uint64_t seed) {
  config.validate();
  HaltModel model;
  model.config_ = config;
  model.params_ = build_params(config);
  model.dropout_seed_ = derive_seed(seed, "dropout-stream");

  Rng rng(derive_seed(seed, "init"));
  for (auto& item : model.params_.items()) {
    const std::string& name = item.name;
    if (name.find("ln") != std::string::npos) {
      const bool is_gain = name.find("gain") != std::string::npos;
      item.value.setConstant(is_gain ? 1.0 : 0.0);
      continue;
    }
    // fan_in: for weight matrices their input width; for biases the input
    // width of the layer that owns them.
    Eigen::Index fan_in = item.value.cols();
    if (item.value.cols() == 1) {
      if (name.rfind("gru.", 0) == 0) fan_in = config.hidden_dim;
      else if (name == "proj.b1") fan_in = config.input_dim;
      else if (name == "proj.b2") fan_in = config.proj_dim;
      else fan_in = config.encoder_out_dim();  // head.b
    }
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (Eigen::Index i = 0; i < item.value.size(); ++i) {
      item.value.data()[i] = rng.uniform(-bound, bound);
    }
  }
  model.meta_["init_seed"] = std::to_string(seed);
  model.meta_["proj_hidden_width"] = std::to_string(config.proj_dim);
  return model;
}

ForwardResult HaltModel::forward(const Batch& batch, bool training) {
  batch.validate();
  if (!params_.all_finite()) {
    throw NumericError("model parameters are not finite");
  }
  const std::uint64_t step = dropout_step_;
  if (training) ++dropout_step_;

  Network net(config_, params_, dropout_seed_, step);
  ForwardResult result;
  result.cache = std::make_shared<BatchCache>();
  result.cache->training = training;
  result.cache->examples.resize(static_cast<std::size_t>(batch.size()));
  result.logits.resize(batch.size());

  parallel_for(static_cast<std::size_t>(batch.size()), [&](std::size_t b) {
    result.logits(static_cast<Eigen::Index>(b)) = net.forward_example(
        batch.features[b], batch.lengths[b], static_cast<int>(b), training,
        result.cache->examples[b]);
  });
  return result;
}

ForwardResult HaltModel::forward_inference(const Batch& batch) const {
  return const_cast<HaltModel*>(this)->forward(batch, false);
}

LossGrad HaltModel::loss_and_grad(const Batch& batch) {
  const std::uint64_t step = dropout_step_;
  ++dropout_step_;
  return loss_and_grad_impl(batch, true, step);
}

LossGrad HaltModel::loss_and_grad_impl(const Batch& batch, bool training,
                                       std::uint64_t dropout_step) const {
  batch.validate();
  if (!params_.all_finite()) {
    throw NumericError("model parameters are not finite");
  }
  const int B = batch.size();
  Network net(config_, params_, dropout_seed_, dropout_step);

  LossGrad out;
  out.param_grads = params_.zeros_like();
  out.logits.resize(B);
  out.input_grads.resize(static_cast<std::size_t>(B));

  std::vector<double> losses(static_cast<std::size_t>(B), 0.0);

  // Fixed-size chunks accumulated in chunk order keep the gradient sum
  // bit-identical for any worker count.
  const int n_chunks = (B + kGradChunk - 1) / kGradChunk;
  const int wave = static_cast<int>(std::max<std::size_t>(1, thread_budget()));
  for (int chunk0 = 0; chunk0 < n_chunks; chunk0 += wave) {
    const int wave_n = std::min(wave, n_chunks - chunk0);
    std::vector<ParamSet> chunk_grads;
    chunk_grads.reserve(static_cast<std::size_t>(wave_n));
    for (int k = 0; k < wave_n; ++k) chunk_grads.push_back(params_.zeros_like());

    parallel_for(static_cast<std::size_t>(wave_n), [&](std::size_t k) {
      const int chunk = chunk0 + static_cast<int>(k);
      const int lo = chunk * kGradChunk;
      const int hi = std::min(B, lo + kGradChunk);
      for (int b = lo; b < hi; ++b) {
        ExampleCache cache;
        const double logit = net.forward_example(
            batch.features[static_cast<std::size_t>(b)], batch.lengths[static_cast<std::size_t>(b)],
            b, training, cache);
        out.logits(b) = logit;
        const double y = static_cast<double>(batch.labels[static_cast<std::size_t>(b)]);
        losses[static_cast<std::size_t>(b)] =
            std::max(logit, 0.0) - logit * y + std::log1p(std::exp(-std::abs(logit)));
        const double dlogit = (sigmoid(logit) - y) / B;
        Eigen::MatrixXd dx = net.backward_example(cache, dlogit, chunk_grads[k]);
        Eigen::MatrixXd& grad = out.input_grads[static_cast<std::size_t>(b)];
        grad = Eigen::MatrixXd::Zero(batch.max_len, config_.input_dim);
        grad.topRows(batch.lengths[static_cast<std::size_t>(b)]) = dx;
      }
    });

    for (int k = 0; k < wave_n; ++k) {
      out.param_grads.add_scaled(chunk_grads[static_cast<std::size_t>(k)], 1.0);
    }
  }

  double loss = 0.0;
  for (double l : losses) loss += l;
  out.loss = loss / B;
  if (!std::isfinite(out.loss) || !out.param_grads.all_finite()) {
    throw NumericError("non-finite value at stage loss_backward");
  }
  return out;
}

std::vector<Prediction> HaltModel::predict(
    const std::vector<FeatureSequence>& traces, double threshold) const {
  if (threshold < 0.0 || threshold > 1.0) {
    throw ConfigError("prediction threshold must be in [0, 1]");
  }
  if (traces.empty()) return {};
  for (const auto& seq : traces) {
    if (seq.rows.cols() != config_.input_dim) {
      throw ConfigError("feature layout mismatch: sequence '" + seq.trace_id +
                        "' has width " + std::to_string(seq.rows.cols()));
    }
  }
  const Batch batch = Batch::from_sequences(traces);
  const ForwardResult fwd = forward_inference(batch);

  std::vector<Prediction> out(traces.size());
  for (std::size_t i = 0; i < traces.size(); ++i) {
    out[i].trace_id = traces[i].trace_id;
    out[i].score = sigmoid(fwd.logits(static_cast<Eigen::Index>(i)));
    out[i].label = out[i].score >= threshold ? 1 : 0;
  }
  return out;
}

Eigen::MatrixXd HaltModel::encode(const FeatureSequence& trace) const {
  if (trace.rows.cols() != config_.input_dim) {
    throw ConfigError("feature layout mismatch: sequence '" + trace.trace_id +
                      "' has width " + std::to_string(trace.rows.cols()));
  }
  Network net(config_, params_, dropout_seed_, 0);
  ExampleCache cache;
  net.forward_example(trace.rows, trace.length(), 0, false, cache);
  return cache.layers.back().concat;
}

Attribution HaltModel::attribute(const Batch& batch) const {
  const LossGrad lg = loss_and_grad_impl(batch, false, 0);

  Attribution attribution;
  attribution.per_feature = Eigen::VectorXd::Zero(config_.input_dim);
  attribution.per_time = Eigen::VectorXd::Zero(batch.max_len);
  for (int b = 0; b < batch.size(); ++b) {
    const Eigen::MatrixXd contrib =
        lg.input_grads[static_cast<std::size_t>(b)]
            .cwiseProduct(batch.features[static_cast<std::size_t>(b)])
            .cwiseAbs();
    // Padded rows are exactly zero already; sum over valid region only to
    // keep the masking explicit.
    const int T = batch.lengths[static_cast<std::size_t>(b)];
    attribution.per_feature += contrib.topRows(T).colwise().sum().transpose();
    attribution.per_time.head(T) += contrib.topRows(T).rowwise().sum();
  }
  const double total = attribution.per_feature.sum();
  if (total > 0.0) attribution.per_feature /= total;
  return attribution;
}

std::string attribution_to_json(const Attribution& attribution) {
  nlohmann::json j;
  nlohmann::json pf = nlohmann::json::object();
  const auto& names = feature_names();
  for (int i = 0; i < kFeatureDim && i < attribution.per_feature.size(); ++i) {
    pf[names[static_cast<std::size_t>(i)]] = attribution.per_feature(i);
  }
  j["per_feature"] = std::move(pf);
  nlohmann::json pt = nlohmann::json::array();
  for (Eigen::Index t = 0; t < attribution.per_time.size(); ++t) {
    pt.push_back(attribution.per_time(t));
  }
  j["per_time"] = std::move(pt);
  return j.dump(2);
}

namespace {

template <typename T>
void write_pod(std::ostream& out, const T& value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw ValidationError("weight file truncated");
  return value;
}

void write_string(std::ostream& out, const std::string& s) {
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& in) {
  const auto len = read_pod<std::uint32_t>(in);
  if (len > (1u << 20)) throw ValidationError("weight file has oversized string");
  std::string s(len, '\0');
  in.read(s.data(), len);
  if (!in) throw ValidationError("weight file truncated");
  return s;
}

}  // namespace

void HaltModel::save(const std::filesystem::path& path) const {
  std::ostringstream out(std::ios::binary);
  out.write(kMagic, 4);
  write_pod<std::uint32_t>(out, kWeightFormatVersion);
  write_pod<std::uint32_t>(out, kFeatureLayoutVersion);

  write_pod<std::int32_t>(out, config_.input_dim);
  write_pod<std::int32_t>(out, config_.proj_dim);
  write_pod<std::int32_t>(out, config_.hidden_dim);
  write_pod<std::int32_t>(out, config_.num_layers);
  write_pod<std::uint8_t>(out, config_.bidirectional ? 1 : 0);
  write_pod<std::uint8_t>(out, config_.out_norm ? 1 : 0);
  write_pod<double>(out, config_.dropout_rate);
  write_pod<double>(out, config_.top_q);
  for (bool b : config_.column_mask) write_pod<std::uint8_t>(out, b ? 1 : 0);
  write_pod<std::uint64_t>(out, dropout_seed_);
  write_pod<std::uint64_t>(out, dropout_step_);

  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(meta_.size()));
  for (const auto& [k, v] : meta_) {
    write_string(out, k);
    write_string(out, v);
  }

  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(params_.size()));
  for (const auto& item : params_.items()) {
    write_string(out, item.name);
    write_pod<std::uint64_t>(out, static_cast<std::uint64_t>(item.value.rows()));
    write_pod<std::uint64_t>(out, static_cast<std::uint64_t>(item.value.cols()));
    // Column-major coefficient order (Eigen native).
    out.write(reinterpret_cast<const char*>(item.value.data()),
              static_cast<std::streamsize>(item.value.size() * sizeof(double)));
  }

  write_file_atomic(path, out.str());
}

HaltModel HaltModel::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open weight file: " + path.string());

  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) {
    throw ValidationError("not a HALT weight file: " + path.string());
  }
  const auto format = read_pod<std::uint32_t>(in);
  if (format != kWeightFormatVersion) {
    throw ValidationError("unsupported weight format version " +
                          std::to_string(format));
  }
  const auto layout = read_pod<std::uint32_t>(in);
  if (layout != static_cast<std::uint32_t>(kFeatureLayoutVersion)) {
    throw ValidationError("weight file uses feature layout version " +
                          std::to_string(layout) + ", this build expects " +
                          std::to_string(kFeatureLayoutVersion));
  }

  HaltConfig cfg;
  cfg.input_dim = read_pod<std::int32_t>(in);
  cfg.proj_dim = read_pod<std::int32_t>(in);
  cfg.hidden_dim = read_pod<std::int32_t>(in);
  cfg.num_layers = read_pod<std::int32_t>(in);
  cfg.bidirectional = read_pod<std::uint8_t>(in) != 0;
  cfg.out_norm = read_pod<std::uint8_t>(in) != 0;
  cfg.dropout_rate = read_pod<double>(in);
  cfg.top_q = read_pod<double>(in);
  if (cfg.input_dim != kFeatureDim) {
    throw ValidationError("weight file input_dim " +
                          std::to_string(cfg.input_dim) + " unsupported");
  }
  for (int i = 0; i < kFeatureDim; ++i) {
    cfg.column_mask[static_cast<std::size_t>(i)] = read_pod<std::uint8_t>(in) != 0;
  }
  cfg.validate();

  HaltModel model;
  model.config_ = cfg;
  model.params_ = build_params(cfg);
  model.dropout_seed_ = read_pod<std::uint64_t>(in);
  model.dropout_step_ = read_pod<std::uint64_t>(in);

  const auto n_meta = read_pod<std::uint32_t>(in);
  for (std::uint32_t i = 0; i < n_meta; ++i) {
    const std::string k = read_string(in);
    model.meta_[k] = read_string(in);
  }

  const auto n_params = read_pod<std::uint32_t>(in);
  if (n_params != model.params_.size()) {
    throw ValidationError("weight file has " + std::to_string(n_params) +
                          " arrays, config implies " +
                          std::to_string(model.params_.size()));
  }
  for (std::uint32_t i = 0; i < n_params; ++i) {
    const std::string name = read_string(in);
    const auto rows = read_pod<std::uint64_t>(in);
    const auto cols = read_pod<std::uint64_t>(in);
    if (!model.params_.contains(name)) {
      throw ValidationError("weight file has unknown array '" + name + "'");
    }
    Eigen::MatrixXd& m = model.params_.at(name);
    if (static_cast<std::uint64_t>(m.rows()) != rows ||
        static_cast<std::uint64_t>(m.cols()) != cols) {
      throw ValidationError("weight file array '" + name + "' has shape " +
                            std::to_string(rows) + "x" + std::to_string(cols) +
                            ", expected " + std::to_string(m.rows()) + "x" +
                            std::to_string(m.cols()));
    }
    in.read(reinterpret_cast<char*>(m.data()),
            static_cast<std::streamsize>(m.size() * sizeof(double)));
    if (!in) throw ValidationError("weight file truncated");
  }
  if (!model.params_.all_finite()) {
    throw ValidationError("weight file contains non-finite parameters");
  }
  return model;
}

}  // namespace halt
