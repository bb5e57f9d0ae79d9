#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "coordx/errors.hpp"
#include "coordx/grid.hpp"
#include "coordx/model.hpp"
#include "coordx/random.hpp"
#include "coordx/sampler.hpp"
#include "coordx/signals.hpp"
#include "coordx/tensor.hpp"

namespace coordx {

template <class T>
struct LossResult {
    double value = 0.0;
    Tensor<T> grad;  // dLoss / dPrediction, same shape as the prediction
};

/// Mean squared error over every element.
template <class T>
LossResult<T> loss_mse(const Tensor<T>& pred, const Tensor<T>& target) {
    if (pred.size() != target.size() || pred.cols() != target.cols()) {
        throw DimensionError("loss_mse: shapes differ " + shape_string(pred.shape()) + " vs " +
                             shape_string(target.shape()));
    }
    LossResult<T> out{0.0, Tensor<T>(pred.shape())};
    const double inv = 1.0 / static_cast<double>(pred.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        double d = static_cast<double>(pred[i]) - static_cast<double>(target[i]);
        sum += d * d;
        out.grad[i] = static_cast<T>(2.0 * d * inv);
    }
    out.value = sum * inv;
    return out;
}

/// Binary cross-entropy on logits, averaged; uses
/// max(x, 0) - x y + log(1 + exp(-|x|)) so large logits stay finite.
template <class T>
LossResult<T> loss_bce_logits(const Tensor<T>& logits, const Tensor<T>& labels) {
    if (logits.size() != labels.size()) throw DimensionError("loss_bce_logits: shapes differ");
    LossResult<T> out{0.0, Tensor<T>(logits.shape())};
    const double inv = 1.0 / static_cast<double>(logits.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        double x = static_cast<double>(logits[i]);
        double y = static_cast<double>(labels[i]);
        sum += std::max(x, 0.0) - x * y + std::log1p(std::exp(-std::abs(x)));
        double sig = x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
        out.grad[i] = static_cast<T>((sig - y) * inv);
    }
    out.value = sum * inv;
    return out;
}

enum class LossKind { mse, bce };

template <class T>
LossResult<T> compute_loss(LossKind kind, const Tensor<T>& pred, const Tensor<T>& target) {
    return kind == LossKind::mse ? loss_mse(pred, target) : loss_bce_logits(pred, target);
}

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

template <class T>
struct AdamState {
    std::vector<Tensor<T>> m;
    std::vector<Tensor<T>> v;
    std::int64_t step = 0;
};

/// One bias-corrected Adam update, in place. Tensors are visited in
/// checkpoint order (first layers, trunk, tail; weight before bias).
template <class T>
void adam_step(ModelParams<T>& params, const ModelParams<T>& grads, AdamState<T>& state, const AdamConfig& cfg) {
    std::vector<Tensor<T>*> ps;
    std::vector<const Tensor<T>*> gs;
    params.for_each_tensor([&](Tensor<T>& t) { ps.push_back(&t); });
    grads.for_each_tensor([&](const Tensor<T>& t) { gs.push_back(&t); });
    if (ps.size() != gs.size()) throw DimensionError("adam_step: gradient layout mismatch");
    if (state.m.empty()) {
        for (auto* p : ps) {
            state.m.emplace_back(p->shape());
            state.v.emplace_back(p->shape());
        }
    }
    ++state.step;
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    for (std::size_t t = 0; t < ps.size(); ++t) {
        auto p = ps[t]->values();
        auto g = gs[t]->values();
        auto m = state.m[t].values();
        auto v = state.v[t].values();
        if (g.size() != p.size()) throw DimensionError("adam_step: gradient shape mismatch");
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double gi = static_cast<double>(g[i]);
            const double mi = cfg.beta1 * static_cast<double>(m[i]) + (1.0 - cfg.beta1) * gi;
            const double vi = cfg.beta2 * static_cast<double>(v[i]) + (1.0 - cfg.beta2) * gi * gi;
            m[i] = static_cast<T>(mi);
            v[i] = static_cast<T>(vi);
            const double mhat = mi / c1;
            const double vhat = vi / c2;
            p[i] = static_cast<T>(static_cast<double>(p[i]) - cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps));
        }
    }
}

// ---------------------------------------------------------------------------
// Training loop

enum class BatchMode {
    full,     // whole canonical lattice every epoch
    sampled,  // decomposable per-axis sampling
    random    // i.i.d. uniform points (baseline models only)
};

struct TrainConfig {
    int epochs = 2000;
    AdamConfig adam{};
    BatchMode batch = BatchMode::full;
    std::size_t batch_points = 0;  // target N for sampled / random batches
    bool continuous = false;       // sampled mode: real-valued positions
    LossKind loss = LossKind::mse;
    std::uint64_t seed = 0;
    int eval_every = 100;
    std::size_t iou_points = 10000;
    double iou_band = 0.05;

    void validate() const {
        if (epochs < 0) throw ConfigError("train.epochs must be >= 0");
        if (!(adam.lr > 0)) throw ConfigError("train.lr must be > 0");
        if (!(adam.beta1 >= 0 && adam.beta1 < 1)) throw ConfigError("train.beta1 must be in [0, 1)");
        if (!(adam.beta2 >= 0 && adam.beta2 < 1)) throw ConfigError("train.beta2 must be in [0, 1)");
        if (!(adam.eps > 0)) throw ConfigError("train.eps must be > 0");
        if (eval_every < 1) throw ConfigError("train.eval_every must be >= 1");
        if (batch != BatchMode::full && batch_points == 0) {
            throw ConfigError("train.batch_points must be >= 1 for sampled or random batches");
        }
    }
};

struct TracePoint {
    int epoch = 0;
    double loss = 0.0;
    double metric = 0.0;
    double seconds = 0.0;  // cumulative training time, evaluation excluded
};

template <class T>
struct TrainReport {
    std::string metric_name;
    std::vector<TracePoint> trace;
    std::vector<double> losses;              // one per epoch
    std::vector<std::size_t> batch_points;   // one per epoch
    std::vector<std::uint64_t> batch_fc_mas; // forward multiply-adds per epoch
    std::vector<unsigned char> batch_decomposable;  // one per epoch
    std::size_t nondecomposable_batches = 0;
    ModelParams<T> params;

    double final_metric() const { return trace.empty() ? std::numeric_limits<double>::quiet_NaN() : trace.back().metric; }
};

template <class T>
using Evaluator = std::function<double(const ModelParams<T>&)>;

/// PSNR on the canonical lattice for image and video signals.
template <class T>
Evaluator<T> psnr_evaluator(const Signal& signal) {
    auto grid = std::make_shared<CoordGrid>(signal.canonical_grid());
    auto truth = std::make_shared<Tensor<double>>(signal.canonical_values());
    return [grid, truth](const ModelParams<T>& p) { return psnr(evaluate_grid(p, *grid), *truth); };
}

/// Easy-set IoU for occupancy signals.
template <class T>
Evaluator<T> iou_evaluator(std::shared_ptr<const IoUPointSets> sets) {
    return [sets](const ModelParams<T>& p) {
        return iou(labels_from_logits(evaluate_points(p, sets->easy)), sets->easy_labels);
    };
}

namespace detail {

inline std::vector<std::size_t> default_branches(const ModelSpec& spec) {
    if (spec.is_split()) return spec.split->branch_sizes;
    return std::vector<std::size_t>(static_cast<std::size_t>(spec.k), 1);
}

// Rows of `full` (N x O over the canonical lattice) selected by the
// per-branch indices, in the batch's own lattice order.
template <class T>
Tensor<T> gather_lattice(const Tensor<T>& full, const Shape& branch_extents,
                         const std::vector<std::vector<std::size_t>>& indices) {
    Shape counts;
    for (const auto& idx : indices) counts.push_back(idx.size());
    const std::size_t n = shape_product(counts);
    Tensor<T> out({n, full.cols()});
    LatticeCursor cursor(counts);
    for (std::size_t p = 0; p < n; ++p) {
        std::size_t flat = 0;
        for (std::size_t i = 0; i < indices.size(); ++i) flat = flat * branch_extents[i] + indices[i][cursor[i]];
        std::copy(full.row(flat), full.row(flat) + full.cols(), out.row(p));
        cursor.advance();
    }
    return out;
}

}  // namespace detail

/// Trains `spec` on `signal`. Each epoch draws a batch (per `cfg.batch`),
/// runs forward, loss, backward and one Adam step. The metric is evaluated
/// every `eval_every` epochs and after the last one.
template <class T = double>
TrainReport<T> fit(const ModelSpec& spec, const Signal& signal, const TrainConfig& cfg, Evaluator<T> evaluator = {}) {
    spec.validate();
    cfg.validate();
    if (spec.k != signal.k || spec.o != signal.o) {
        throw ConfigError("model (k=" + std::to_string(spec.k) + ", o=" + std::to_string(spec.o) +
                          ") does not match signal '" + signal.name + "' (k=" + std::to_string(signal.k) +
                          ", o=" + std::to_string(signal.o) + ")");
    }
    Rng root(cfg.seed);
    Rng init_rng = root.split(1);
    Rng batch_rng = root.split(2);

    TrainReport<T> report;
    report.params = init_params<T>(spec, init_rng);
    if (!evaluator) {
        if (signal.kind == SignalKind::occupancy3d) {
            Rng iou_rng = root.split(3);
            auto sets = std::make_shared<const IoUPointSets>(build_iou_sets(signal, cfg.iou_points, cfg.iou_band, iou_rng));
            evaluator = iou_evaluator<T>(sets);
            report.metric_name = "easy_iou";
        } else {
            evaluator = psnr_evaluator<T>(signal);
            report.metric_name = "psnr";
        }
    } else {
        report.metric_name = "metric";
    }

    const auto branches = detail::default_branches(spec);
    const CoordGrid grid = signal.canonical_grid(branches);
    const DecomposedGrid canonical = decompose(grid);
    const Tensor<T> targets = signal.canonical_values().template cast<T>();
    const Shape extents = canonical.branch_rows();

    if (cfg.batch == BatchMode::random && spec.is_split()) {
        throw ConfigError("random point batches cannot be decomposed; use sampled batches for split models");
    }
    SamplePlan sample_plan;
    if (cfg.batch == BatchMode::sampled) sample_plan = plan(cfg.batch_points, extents, cfg.continuous);

    struct Batch {
        DecomposedGrid grid;
        Tensor<T> targets;
    };
    auto next_batch = [&]() -> Batch {
        switch (cfg.batch) {
            case BatchMode::full:
                return {canonical, targets};
            case BatchMode::sampled: {
                auto b = sample(sample_plan, canonical, batch_rng);
                Tensor<T> t = cfg.continuous ? signal.values_at(recompose(b.grid)).template cast<T>()
                                             : detail::gather_lattice(targets, extents, b.indices);
                return {std::move(b.grid), std::move(t)};
            }
            case BatchMode::random: {
                Tensor<double> pts({cfg.batch_points, grid.dims()});
                Tensor<T> t({cfg.batch_points, targets.cols()});
                const Tensor<double> all = recompose(canonical);
                for (std::size_t i = 0; i < cfg.batch_points; ++i) {
                    auto idx = static_cast<std::size_t>(batch_rng.below(all.rows()));
                    std::copy(all.row(idx), all.row(idx) + all.cols(), pts.row(i));
                    std::copy(targets.row(idx), targets.row(idx) + targets.cols(), t.row(i));
                }
                return {DecomposedGrid{{std::move(pts)}}, std::move(t)};
            }
        }
        throw ConfigError("unknown batch mode");
    };

    auto forward = [&](const DecomposedGrid& g) {
        if (spec.is_split()) return forward_traced_coordx(report.params, g);
        if (cfg.batch == BatchMode::random) return forward_traced_baseline(report.params, g.branches.front());
        return forward_traced_baseline(report.params, recompose(g));
    };

    using clock = std::chrono::steady_clock;
    double elapsed = 0.0;
    AdamState<T> adam;

    if (cfg.epochs == 0) {
        auto st = forward(canonical);
        double loss = compute_loss(cfg.loss, st.output, targets).value;
        report.trace.push_back({0, loss, evaluator(report.params), 0.0});
        return report;
    }

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        auto t0 = clock::now();
        Batch batch = next_batch();
        bool decomposable = cfg.batch != BatchMode::random;
        if (cfg.batch == BatchMode::sampled) decomposable = is_decomposable(recompose(batch.grid), branches);
        if (!decomposable && spec.is_split()) ++report.nondecomposable_batches;
        report.batch_decomposable.push_back(decomposable ? 1 : 0);
        const Shape rows = cfg.batch == BatchMode::random ? Shape{cfg.batch_points} : batch.grid.branch_rows();
        report.batch_points.push_back(shape_product(rows));
        report.batch_fc_mas.push_back(count_fc_ops(spec, rows).multiply_adds);

        auto st = forward(batch.grid);
        auto loss = compute_loss(cfg.loss, st.output, batch.targets);
        if (!std::isfinite(loss.value)) {
            throw DivergenceError("non-finite loss at epoch " + std::to_string(epoch) + " (lr=" +
                                  std::to_string(cfg.adam.lr) + ")");
        }
        auto grads = backward(report.params, st, loss.grad);
        adam_step(report.params, grads, adam, cfg.adam);
        elapsed += std::chrono::duration<double>(clock::now() - t0).count();
        report.losses.push_back(loss.value);

        if (epoch % cfg.eval_every == 0 || epoch == cfg.epochs) {
            report.trace.push_back({epoch, loss.value, evaluator(report.params), elapsed});
        }
    }
    return report;
}

// ---------------------------------------------------------------------------
// Finite-difference gradient audit

struct AuditResult {
    double max_rel_error = 0.0;
    std::string worst;  // tensor / index of the worst entry
    std::size_t checked = 0;
};

/// Relative error used by the audit: |a - b| / max(|a|, |b|, floor).
inline double audit_rel_error(double analytic, double numeric, double floor = 1e-6) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Compares backward() with central finite differences (step h) on a
/// random tiny problem: random weights, 2-3 rows per branch (6 points for
/// a baseline), random targets, the chosen loss. Meant for specs with at
/// most a few thousand parameters.
template <class T = double>
AuditResult grad_audit(const ModelSpec& spec, Rng& rng, LossKind loss_kind = LossKind::mse, double h = 1e-5) {
    ModelParams<T> params = init_params<T>(spec, rng);
    DecomposedGrid grid;
    Tensor<double> points;
    if (spec.is_split()) {
        for (auto ki : spec.split->branch_sizes) {
            Tensor<double> b({2 + static_cast<std::size_t>(rng.below(2)), ki});
            for (auto& v : b.values()) v = rng.uniform(-1.0, 1.0);
            grid.branches.push_back(std::move(b));
        }
    } else {
        points = Tensor<double>({6, static_cast<std::size_t>(spec.k)});
        for (auto& v : points.values()) v = rng.uniform(-1.0, 1.0);
    }
    auto run = [&](const ModelParams<T>& p) {
        return spec.is_split() ? forward_traced_coordx(p, grid) : forward_traced_baseline(p, points);
    };
    auto st = run(params);
    Tensor<T> target(st.output.shape());
    for (auto& v : target.values()) {
        v = loss_kind == LossKind::mse ? static_cast<T>(rng.uniform(-1.0, 1.0)) : static_cast<T>(rng.below(2));
    }
    auto loss = compute_loss(loss_kind, st.output, target);
    ModelParams<T> grads = backward(params, st, loss.grad);

    std::vector<Tensor<T>*> ps;
    std::vector<const Tensor<T>*> gs;
    params.for_each_tensor([&](Tensor<T>& t) { ps.push_back(&t); });
    grads.for_each_tensor([&](const Tensor<T>& t) { gs.push_back(&t); });

    AuditResult result;
    for (std::size_t t = 0; t < ps.size(); ++t) {
        for (std::size_t i = 0; i < ps[t]->size(); ++i) {
            T& p = (*ps[t])[i];
            const T saved = p;
            auto at = [&](double offset) {
                p = saved + static_cast<T>(offset);
                return compute_loss(loss_kind, run(params).output, target).value;
            };
            // five-point central stencil
            const double numeric = (8.0 * (at(h) - at(-h)) - (at(2 * h) - at(-2 * h))) / (12.0 * h);
            p = saved;
            double err = audit_rel_error(static_cast<double>((*gs[t])[i]), numeric);
            ++result.checked;
            if (err >= result.max_rel_error) {
                result.max_rel_error = err;
                result.worst = "tensor " + std::to_string(t) + " index " + std::to_string(i);
            }
        }
    }
    return result;
}

}  // namespace coordx
