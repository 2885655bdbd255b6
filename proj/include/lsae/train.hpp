#ifndef LSAE_TRAIN_HPP
#define LSAE_TRAIN_HPP

#include "lsae/diagnostics.hpp"
#include "lsae/embedding_store.hpp"
#include "lsae/sae.hpp"

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace lsae {

/// Defaults follow the published LouvreSAE grid where it states a value
/// (B, E, warmup, betas, weight decay) and the selected run for lr and k.
struct TrainConfig {
    std::size_t epochs = 30;
    std::size_t batch_size = 8192;
    double lr = 5e-5;
    std::size_t warmup_steps = 100;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double weight_decay = 0.0;
    double lambda = 1e-3;
    Index k = 32;
    Index dict_size = 0;  // 0 means 16 x D
    std::uint64_t seed = 0;
    std::size_t dead_window_batches = 1;
    bool normalize_inputs = false;
    bool renormalize_decoder = false;
    std::size_t log_every = 1;
};

void validate(const TrainConfig& config);

/// Applies one `key = value` setting. Throws DataError for unknown keys or
/// unparsable values.
void apply_setting(TrainConfig& config, const std::string& key, const std::string& value);

/// Reads a flat key-value file: one `key = value` per line, `#` comments.
void apply_config_file(TrainConfig& config, const std::filesystem::path& path);

inline constexpr double kAdamEps = 1e-8;

template <typename Scalar>
struct AdamState {
    std::uint64_t step = 0;
    Gradients<Scalar> m;
    Gradients<Scalar> v;
    double eps = kAdamEps;
};

struct AdamHyper {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double weight_decay = 0.0;
};

/// lr * min(1, (step + 1) / warmup_steps), or lr when warmup is disabled.
inline double lr_schedule(std::uint64_t step, double lr, std::uint64_t warmup_steps) {
    if (warmup_steps == 0) return lr;
    return lr * std::min(1.0, static_cast<double>(step + 1) / static_cast<double>(warmup_steps));
}

/// Bias-corrected Adam on one flat parameter block at step t (t >= 1), with
/// decoupled weight decay when weight_decay > 0.
template <typename Scalar>
void adam_update(Scalar* param, Scalar* m, Scalar* v, const Scalar* grad, Index n, std::uint64_t t,
                 double lr, const AdamHyper& hyper, double eps) {
    const double c1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(t));
    const auto b1 = static_cast<Scalar>(hyper.beta1);
    const auto b2 = static_cast<Scalar>(hyper.beta2);
    for (Index i = 0; i < n; ++i) {
        const Scalar g = grad[i];
        m[i] = b1 * m[i] + (Scalar(1) - b1) * g;
        v[i] = b2 * v[i] + (Scalar(1) - b2) * g * g;
        const Scalar m_hat = m[i] / static_cast<Scalar>(c1);
        const Scalar v_hat = v[i] / static_cast<Scalar>(c2);
        Scalar next = param[i] - static_cast<Scalar>(lr) * (m_hat / (std::sqrt(v_hat) + static_cast<Scalar>(eps)));
        if (hyper.weight_decay > 0) next -= static_cast<Scalar>(lr * hyper.weight_decay) * param[i];
        param[i] = next;
    }
}

template <typename Scalar>
AdamState<Scalar> init_adam(const SaeModel<Scalar>& model) {
    AdamState<Scalar> s;
    s.m.w_enc = RowMatrix<Scalar>::Zero(model.w_enc.rows(), model.w_enc.cols());
    s.m.b_enc = Vector<Scalar>::Zero(model.b_enc.size());
    s.m.w_dec = RowMatrix<Scalar>::Zero(model.w_dec.rows(), model.w_dec.cols());
    s.m.b_dec = Vector<Scalar>::Zero(model.b_dec.size());
    s.v = s.m;
    return s;
}

/// One Adam step over all parameters in the fixed order b_dec, b_enc, w_dec,
/// w_enc.
template <typename Scalar>
void adam_step(AdamState<Scalar>& state, SaeModel<Scalar>& model, const Gradients<Scalar>& g, double lr_t,
               const AdamHyper& hyper) {
    const auto t = ++state.step;
    auto update = [&](auto& p, auto& m, auto& v, const auto& grad) {
        require_shape(p.size() == grad.size() && m.size() == p.size() && v.size() == p.size(), "adam block");
        adam_update<Scalar>(p.data(), m.data(), v.data(), grad.data(), p.size(), t, lr_t, hyper, state.eps);
    };
    update(model.b_dec, state.m.b_dec, state.v.b_dec, g.b_dec);
    update(model.b_enc, state.m.b_enc, state.v.b_enc, g.b_enc);
    update(model.w_dec, state.m.w_dec, state.v.w_dec, g.w_dec);
    update(model.w_enc, state.m.w_enc, state.v.w_enc, g.w_enc);
}

/// True for every concept that is active in no sample of the batch.
template <typename Scalar>
BoolVector dead_mask_for_batch(const SparseBatch<Scalar>& sparse) {
    return !sparse.active_mask.colwise().any().transpose();
}

/// EMA (decay 0.99) of each batch's smallest active pre-activation. The first
/// observation initializes the average.
class ThresholdCalibrator {
public:
    static constexpr double kDecay = 0.99;

    void observe(double min_active) {
        value_ = has_value_ ? kDecay * value_ + (1.0 - kDecay) * min_active : min_active;
        has_value_ = true;
    }
    double theta() const { return has_value_ ? value_ : 0.0; }

private:
    double value_ = 0.0;
    bool has_value_ = false;
};

struct StepRecord {
    std::uint64_t step = 0;
    double lr = 0;
    double total = 0;
    double mse = 0;
    double reanimation = 0;
    std::size_t dead_count = 0;  // I_dead used in this step's loss
};

struct TrainHistory {
    std::vector<StepRecord> steps;
    std::vector<std::uint64_t> activation_counts;       // whole run
    std::vector<std::uint64_t> final_epoch_counts;      // last epoch only
    std::optional<DiagnosticsReport> final;             // absent when no step ran
    double dead_fraction_cumulative = 0;
};

/// Called after every optimizer step; lets callers stream progress.
using StepCallback = std::function<void(const StepRecord&)>;

struct TrainResult {
    SaeModel<float> model;
    TrainHistory history;
};

TrainResult train(const EmbeddingDataset& dataset, const TrainConfig& config, const StepCallback& on_step = {});

void write_history(const TrainHistory& history, const std::filesystem::path& path);

} // namespace lsae

#endif // LSAE_TRAIN_HPP
