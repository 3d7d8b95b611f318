#pragma once

// SGD training loop with step-decay schedule and per-step loss log.

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "rssd/data.hpp"
#include "rssd/loss.hpp"
#include "rssd/model.hpp"

namespace rssd {

struct TrainConfig {
  std::size_t steps = 3000;
  std::size_t batch_size = 16;
  double lr = 0.05;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::vector<std::size_t> milestones{2000, 2600};
  double lr_decay = 0.1;
  bool flip = true;
  std::uint64_t seed = 1;
  // Per-level heads run one weight set until this step; 0 disables.
  std::size_t untie_step = 0;
  double grad_clip = 10.0;  // global L2 norm; 0 disables

  double lr_at(std::size_t step) const {
    double lr_now = lr;
    for (std::size_t m : milestones) {
      if (step >= m) lr_now *= lr_decay;
    }
    return lr_now;
  }

  void validate() const {
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    if (!(lr > 0)) throw ConfigError("lr must be positive");
    if (momentum < 0 || momentum >= 1) throw ConfigError("momentum must be in [0, 1)");
    if (weight_decay < 0) throw ConfigError("weight_decay must be non-negative");
    for (std::size_t i = 1; i < milestones.size(); ++i) {
      if (milestones[i] <= milestones[i - 1]) throw ConfigError("lr milestones must increase");
    }
  }
};

struct LogRow {
  std::size_t step = 0;
  double lr = 0;
  double loc = 0;
  double conf = 0;
  double total = 0;
  std::size_t positives = 0;
  bool operator==(const LogRow&) const = default;
};

inline std::string log_csv(const std::vector<LogRow>& rows) {
  std::string out = "step,lr,loc,conf,total,positives\n";
  for (const auto& r : rows) {
    out += std::to_string(r.step) + "," + format_double(r.lr) + "," + format_double(r.loc) + "," +
           format_double(r.conf) + "," + format_double(r.total) + "," + std::to_string(r.positives) + "\n";
  }
  return out;
}

// Normalized ground truth for matching.
inline std::vector<GroundTruth> normalized_truth(const ImageAnnotation& im) {
  std::vector<GroundTruth> out;
  for (const auto& o : im.objects) out.push_back({o.class_id, normalize_box(o.box, im.width, im.height)});
  return out;
}

template <typename T>
class Trainer {
 public:
  Trainer(Detector<T>& model, const Dataset& data, TrainConfig cfg)
      : model_(model), data_(data), cfg_(std::move(cfg)), rng_(cfg_.seed) {
    cfg_.validate();
    const auto& names = model.config().class_names;
    if (names != data.annotations.class_names) throw ValidationError("dataset classes differ from the model's");
    if (data.images.h() != model.config().pyramid.input_size || data.images.w() != data.images.h()) {
      throw ValidationError("images are " + std::to_string(data.images.h()) + " px, model input is " +
                            std::to_string(model.config().pyramid.input_size));
    }
    if (cfg_.untie_step > 0) model_.heads().tie();
  }

  std::size_t step() const { return step_; }
  const std::vector<LogRow>& log() const { return log_; }

  // One SGD step on the next batch.
  const LogRow& run_step() {
    if (cfg_.untie_step > 0 && step_ == cfg_.untie_step) model_.heads().untie();
    const std::size_t B = cfg_.batch_size, S = data_.images.h();
    Tensor4<T> batch(B, data_.images.c(), S, S);
    std::vector<MatchResult> matches;
    for (std::size_t b = 0; b < B; ++b) {
      const std::size_t idx = next_index();
      Tensor4<float> one(1, data_.images.c(), S, S);
      std::copy(data_.images.image(idx).begin(), data_.images.image(idx).end(), one.data().begin());
      ImageAnnotation im = data_.annotations.images[idx];
      if (cfg_.flip && detail::unit(rng_) < 0.5) {
        flip_horizontal(one, 0);
        im = flip_horizontal(std::move(im));
      }
      auto dst = batch.image(b);
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] = T(one[k]);
      matches.push_back(match_anchors(model_.anchors(), normalized_truth(im)));
    }
    GradTape<T> tape;
    const TensorId pred = model_.forward(tape, tape.input(std::move(batch)), true);
    Tensor4<T> seed;
    const LossBreakdown loss = multibox_loss(tape.value(pred), matches, model_.num_classes(), &seed);
    if (!std::isfinite(loss.total)) {
      throw NumericError("non-finite loss at step " + std::to_string(step_) + " (loc " + format_double(loss.loc) +
                         ", conf " + format_double(loss.conf) + ")");
    }
    const auto grads = tape.backward(pred, seed);
    const double lr = cfg_.lr_at(step_);
    apply_sgd(grads, lr);
    log_.push_back({step_, lr, loss.loc, loss.conf, loss.total, loss.positives});
    ++step_;
    return log_.back();
  }

  void run(const std::function<void(const LogRow&)>& on_step = {}) {
    while (step_ < cfg_.steps) {
      const LogRow& r = run_step();
      if (on_step) on_step(r);
    }
    if (cfg_.untie_step > 0 && step_ >= cfg_.untie_step) model_.heads().untie();
  }

 private:
  std::size_t next_index() {
    if (cursor_ == order_.size()) {
      order_.resize(data_.annotations.images.size());
      std::iota(order_.begin(), order_.end(), std::size_t{0});
      for (std::size_t i = order_.size(); i-- > 1;) std::swap(order_[i], order_[detail::pick(rng_, 0, i)]);
      cursor_ = 0;
    }
    return order_[cursor_++];
  }

  void apply_sgd(const GradientSet<T>& grads, double lr) {
    double norm2 = 0;
    std::vector<std::pair<Parameter<T>*, const Tensor4<T>*>> live;
    for (auto& p : model_.params()) {
      if (!p.trainable) continue;
      const Tensor4<T>* g = grads.of(p);
      if (!g) continue;
      live.push_back({&p, g});
      for (T v : g->data()) norm2 += double(v) * double(v);
    }
    const double norm = std::sqrt(norm2);
    const double scale = cfg_.grad_clip > 0 && norm > cfg_.grad_clip ? cfg_.grad_clip / norm : 1.0;
    for (auto [p, g] : live) {
      auto& v = velocity_[p->name];
      if (v.empty()) v.assign(p->value.size(), 0.0);
      const bool decay = p->name.ends_with(".weight");
      auto w = p->value.data();
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double grad = double((*g)[i]) * scale + (decay ? cfg_.weight_decay * double(w[i]) : 0.0);
        v[i] = cfg_.momentum * v[i] + grad;
        w[i] = T(double(w[i]) - lr * v[i]);
      }
    }
  }

  Detector<T>& model_;
  const Dataset& data_;
  TrainConfig cfg_;
  std::mt19937_64 rng_;
  std::size_t step_ = 0;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  std::map<std::string, std::vector<double>> velocity_;
  std::vector<LogRow> log_;
};

}  // namespace rssd
