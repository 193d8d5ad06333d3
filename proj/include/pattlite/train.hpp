#pragma once

// Adam optimization, global-norm gradient clipping, learning-rate schedules,
// early stopping with best-weight restoration, and the two-stage
// train/finetune driver. Single-threaded with respect to parameter
// mutation; given (seed, config, data) every logged number is fixed
// bit-for-bit.

#include <cmath>
#include <cstdio>
#include <limits>
#include <memory>
#include <ostream>
#include <string>
#include <unordered_map>
#include <vector>

#include "pattlite/data.hpp"
#include "pattlite/model.hpp"
#include "pattlite/weights_io.hpp"

namespace pattlite {

struct TrainConfig {
    int batch_size = 8;
    double stage1_lr = 1e-3;
    double stage2_lr = 1e-5;
    double clip_norm = 1.0;
    // Plateau schedule (stage 1), driven by the monitored accuracy.
    int plateau_patience = 5;
    double plateau_factor = 0.5;
    double plateau_min_lr = 1e-6;
    // Inverse time decay (stage 2): lr = lr0 / (1 + rate * step / decay_steps).
    double inverse_time_decay_rate = 1.0;
    int inverse_time_decay_steps = 0;  // 0 means one epoch of steps
    // Early stopping on the monitored accuracy.
    int early_stop_patience = 10;
    bool restore_best = true;
    int max_epochs_stage1 = 100;
    int max_epochs_stage2 = 100;
    int unfreeze_top_n = 0;
    std::uint64_t seed = 42;
};

// ---------------------------------------------------------------------------
// Optimizer.

template <class Scalar>
struct AdamState {
    std::unordered_map<std::string, Tensor<Scalar>> m, v;
    long long t = 0;
    double beta1 = 0.9, beta2 = 0.999, epsilon = 1e-7;
};

// Scales every gradient by c / max(c, global_l2_norm); returns the
// pre-clip norm. Never increases a gradient or flips its sign.
template <class Scalar>
double clip_global_norm(std::vector<Tensor<Scalar>*>& grads, double c) {
    if (!(c > 0.0)) throw ConfigError("clip_global_norm: threshold must be positive");
    double sq = 0.0;
    for (const auto* g : grads)
        for (Index i = 0; i < g->size(); ++i) {
            const double v = static_cast<double>((*g)[i]);
            sq += v * v;
        }
    const double norm = std::sqrt(sq);
    if (!std::isfinite(norm)) throw DivergenceError("clip_global_norm: non-finite gradient norm");
    if (norm > c) {
        const Scalar scale = static_cast<Scalar>(c / norm);
        for (auto* g : grads)
            for (Index i = 0; i < g->size(); ++i) (*g)[i] *= scale;
    }
    return norm;
}

// Bias-corrected Adam update, applied in place to trainable parameters that
// received a gradient. State slots exist only for trainable parameters.
template <class Scalar>
void adam_step(ParameterStore<Scalar>& params, const GradMap<Scalar>& grads,
               AdamState<Scalar>& state, double lr) {
    ++state.t;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
    for (auto& entry : params.entries()) {
        if (!entry.trainable) continue;
        auto git = grads.find(entry.name);
        if (git == grads.end()) continue;
        const Tensor<Scalar>& g = git->second;
        if (!g.same_shape(entry.value))
            throw ShapeError("adam_step: gradient shape mismatch for " + entry.name);
        auto mit = state.m.find(entry.name);
        if (mit == state.m.end()) {
            mit = state.m.emplace(entry.name, Tensor<Scalar>(g.shape(), Scalar(0))).first;
            state.v.emplace(entry.name, Tensor<Scalar>(g.shape(), Scalar(0)));
        }
        Tensor<Scalar>& m = mit->second;
        Tensor<Scalar>& v = state.v.at(entry.name);
        const Scalar b1 = static_cast<Scalar>(state.beta1), b2 = static_cast<Scalar>(state.beta2);
        for (Index i = 0; i < g.size(); ++i) {
            m[i] = b1 * m[i] + (Scalar(1) - b1) * g[i];
            v[i] = b2 * v[i] + (Scalar(1) - b2) * g[i] * g[i];
            const double mhat = static_cast<double>(m[i]) / bc1;
            const double vhat = static_cast<double>(v[i]) / bc2;
            entry.value[i] -=
                static_cast<Scalar>(lr * mhat / (std::sqrt(vhat) + state.epsilon));
        }
    }
}

// ---------------------------------------------------------------------------
// Learning-rate schedules.

// Reduce-on-plateau: after `patience` consecutive epochs without a new best
// the rate is multiplied by `factor` (floored at min_lr) and the counter
// resets.
class PlateauSchedule {
public:
    PlateauSchedule(double lr, int patience, double factor, double min_lr)
        : lr_(lr), patience_(patience), factor_(factor), min_lr_(min_lr) {
        if (patience < 1 || !(factor > 0.0) || factor >= 1.0)
            throw ConfigError("PlateauSchedule: need patience >= 1 and factor in (0,1)");
    }

    // Feed the end-of-epoch monitor value; returns the rate for the next epoch.
    double observe(double metric) {
        if (metric > best_) {
            best_ = metric;
            stale_ = 0;
        } else if (++stale_ >= patience_) {
            lr_ = std::max(lr_ * factor_, min_lr_);
            stale_ = 0;
        }
        return lr_;
    }

    double lr() const { return lr_; }

private:
    double lr_;
    int patience_;
    double factor_, min_lr_;
    double best_ = -std::numeric_limits<double>::infinity();
    int stale_ = 0;
};

inline double inverse_time_decay(double lr0, long long step, double decay_rate,
                                 long long decay_steps) {
    if (decay_steps <= 0) throw ConfigError("inverse_time_decay: decay_steps must be positive");
    return lr0 / (1.0 + decay_rate * static_cast<double>(step) / static_cast<double>(decay_steps));
}

// ---------------------------------------------------------------------------
// Early stopping with best-weight snapshots.

template <class Scalar>
class EarlyStopping {
public:
    EarlyStopping(int patience, bool restore_best)
        : patience_(patience), restore_best_(restore_best) {}

    // Returns true when training should stop. Snapshots on every new best.
    bool observe(int epoch, double metric, const Model<Scalar>& model) {
        if (metric > best_) {
            best_ = metric;
            best_epoch_ = epoch;
            stale_ = 0;
            if (restore_best_) snapshot_ = snapshot_weights(model);
            return false;
        }
        return ++stale_ >= patience_;
    }

    void maybe_restore(Model<Scalar>& model) const {
        if (restore_best_ && !snapshot_.empty()) restore_weights(model, snapshot_);
    }

    int best_epoch() const { return best_epoch_; }
    double best_metric() const { return best_; }

private:
    int patience_;
    bool restore_best_;
    double best_ = -std::numeric_limits<double>::infinity();
    int best_epoch_ = 0;
    int stale_ = 0;
    std::string snapshot_;
};

// ---------------------------------------------------------------------------
// Stage driver.

struct EpochRow {
    int epoch = 0;  // 1-based
    double lr = 0.0;
    double train_loss = 0.0;
    double train_acc = 0.0;
    double val_acc = 0.0;  // monitor value; train accuracy when no split exists
};

struct StageReport {
    std::vector<EpochRow> rows;
    int best_epoch = 0;
    double best_metric = 0.0;
    std::string stop_reason;  // "max_epochs" | "early_stop"
    std::string monitor;      // "val_acc" | "train_acc"
};

enum class Stage { Train, Finetune };

inline void write_stage_report_csv(const StageReport& report, std::ostream& os) {
    os << "epoch,lr,train_loss,train_acc,val_acc\n";
    char buf[160];
    for (const auto& r : report.rows) {
        std::snprintf(buf, sizeof(buf), "%d,%.12g,%.12g,%.12g,%.12g\n", r.epoch, r.lr,
                      r.train_loss, r.train_acc, r.val_acc);
        os << buf;
    }
}

namespace detail {

inline int argmax_row(const float* row, int d) {
    int best = 0;
    for (int i = 1; i < d; ++i)
        if (row[i] > row[best]) best = i;
    return best;
}

inline double accuracy_on(const Model<float>& model, BatchStream& stream) {
    long long correct = 0, total = 0;
    for (auto& batch : stream.epoch(0)) {
        const Tensorf probs = model.forward(batch.images);
        const int n = probs.extent(0), d = probs.extent(1);
        for (int i = 0; i < n; ++i) {
            if (argmax_row(probs.data() + static_cast<Index>(i) * d, d) ==
                batch.labels[static_cast<std::size_t>(i)])
                ++correct;
            ++total;
        }
    }
    return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
}

}  // namespace detail

// One training stage: seeded shuffle -> batch -> forward -> loss -> backward
// -> clip -> adam step, with the plateau schedule in stage 1 and inverse
// time decay in stage 2, early stopping in both, and best-weight
// restoration at the end. `monitor_ds` may be null (train accuracy is
// monitored instead, the no-validation-split case).
inline StageReport run_stage(Model<float>& model, const Dataset& train_ds,
                             const Dataset* monitor_ds, const TrainConfig& cfg, Stage stage,
                             std::ostream* echo = nullptr) {
    if (train_ds.samples.empty()) throw DataError("run_stage: empty training dataset");
    set_trainable(model, stage == Stage::Train ? 0 : cfg.unfreeze_top_n);

    const std::uint64_t stage_tag = stage == Stage::Train ? 0x57A6E1 : 0x57A6E2;
    BatchStream train_stream(train_ds, model.cfg.input_size, cfg.batch_size,
                             Rng(cfg.seed).split(stage_tag).seed(), /*training=*/true);
    std::unique_ptr<BatchStream> monitor_stream;
    if (monitor_ds && !monitor_ds->samples.empty())
        monitor_stream = std::make_unique<BatchStream>(*monitor_ds, model.cfg.input_size,
                                                       cfg.batch_size, 0, /*training=*/false);

    const int max_epochs = stage == Stage::Train ? cfg.max_epochs_stage1 : cfg.max_epochs_stage2;
    const long long decay_steps = cfg.inverse_time_decay_steps > 0
                                      ? cfg.inverse_time_decay_steps
                                      : train_stream.batches_per_epoch();

    StageReport report;
    report.monitor = monitor_stream ? "val_acc" : "train_acc";
    report.stop_reason = "max_epochs";

    const int cache_from = model.first_trainable_layer();
    AdamState<float> adam;
    PlateauSchedule plateau(cfg.stage1_lr, cfg.plateau_patience, cfg.plateau_factor,
                            cfg.plateau_min_lr);
    EarlyStopping<float> stopper(cfg.early_stop_patience, cfg.restore_best);
    double lr = stage == Stage::Train ? cfg.stage1_lr : cfg.stage2_lr;
    long long step = 0;

    typename Model<float>::Cache cache;
    for (int epoch = 1; epoch <= max_epochs; ++epoch) {
        double loss_sum = 0.0;
        long long correct = 0, total = 0;
        // Logged rate = the rate in force at the first step of the epoch.
        const double lr_logged =
            stage == Stage::Finetune
                ? inverse_time_decay(cfg.stage2_lr, step, cfg.inverse_time_decay_rate, decay_steps)
                : lr;
        for (auto& batch : train_stream.epoch(epoch)) {
            if (stage == Stage::Finetune)
                lr = inverse_time_decay(cfg.stage2_lr, step, cfg.inverse_time_decay_rate,
                                        decay_steps);
            const Tensorf probs = model.forward(batch.images, Mode::Train, &cache, cache_from);
            const int n = probs.extent(0), d = probs.extent(1);
            const double loss = sparse_ce_loss(cache.logits, batch.labels);
            if (!std::isfinite(loss))
                throw DivergenceError("run_stage: non-finite loss at epoch " +
                                      std::to_string(epoch));
            loss_sum += loss * n;
            for (int i = 0; i < n; ++i) {
                if (detail::argmax_row(probs.data() + static_cast<Index>(i) * d, d) ==
                    batch.labels[static_cast<std::size_t>(i)])
                    ++correct;
                ++total;
            }
            GradMap<float> grads = model.backward(cache, batch.labels);
            std::vector<Tensor<float>*> grad_list;
            for (auto& entry : model.params.entries()) {
                auto it = grads.find(entry.name);
                if (it != grads.end()) grad_list.push_back(&it->second);
            }
            clip_global_norm(grad_list, cfg.clip_norm);
            adam_step(model.params, grads, adam, lr);
            ++step;
        }

        EpochRow row;
        row.epoch = epoch;
        row.lr = lr_logged;
        row.train_loss = total ? loss_sum / static_cast<double>(total) : 0.0;
        row.train_acc = total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
        row.val_acc = monitor_stream ? detail::accuracy_on(model, *monitor_stream) : row.train_acc;
        report.rows.push_back(row);
        if (echo)
            *echo << "epoch " << row.epoch << "  lr " << row.lr << "  loss " << row.train_loss
                  << "  train_acc " << row.train_acc << "  " << report.monitor << " "
                  << row.val_acc << "\n";

        const bool stop = stopper.observe(epoch, row.val_acc, model);
        if (stage == Stage::Train) lr = plateau.observe(row.val_acc);
        if (stop) {
            report.stop_reason = "early_stop";
            break;
        }
    }
    stopper.maybe_restore(model);
    report.best_epoch = stopper.best_epoch();
    report.best_metric = stopper.best_metric();
    return report;
}

// Stage 1 on a fully frozen backbone, then finetuning with
// cfg.unfreeze_top_n records unfrozen, starting from the stage-1 best.
inline std::pair<StageReport, StageReport> run_two_stage(Model<float>& model,
                                                         const Dataset& train_ds,
                                                         const Dataset* monitor_ds,
                                                         const TrainConfig& cfg,
                                                         std::ostream* echo = nullptr) {
    StageReport first = run_stage(model, train_ds, monitor_ds, cfg, Stage::Train, echo);
    StageReport second = run_stage(model, train_ds, monitor_ds, cfg, Stage::Finetune, echo);
    return {std::move(first), std::move(second)};
}

}  // namespace pattlite
