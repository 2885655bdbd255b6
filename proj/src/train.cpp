#include "lsae/train.hpp"

#include <json.hpp>

#include <charconv>
#include <fstream>
#include <limits>

namespace lsae {

namespace {

std::string trim(const std::string& s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string::npos) return {};
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
    T out{};
    const char* begin = value.data();
    const char* end = begin + value.size();
    auto [ptr, ec] = std::from_chars(begin, end, out);
    if (ec != std::errc() || ptr != end) throw DataError("invalid value for " + key + ": '" + value + "'");
    return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1" || value == "yes") return true;
    if (value == "false" || value == "0" || value == "no") return false;
    throw DataError("invalid boolean for " + key + ": '" + value + "'");
}

} // namespace

void validate(const TrainConfig& c) {
    if (c.batch_size == 0) throw DataError("batch_size must be positive");
    if (!(c.lr > 0)) throw DataError("lr must be positive");
    if (!(c.beta1 > 0 && c.beta1 < 1)) throw DataError("beta1 must be in (0, 1)");
    if (!(c.beta2 > 0 && c.beta2 < 1)) throw DataError("beta2 must be in (0, 1)");
    if (!(c.weight_decay >= 0)) throw DataError("weight_decay must be nonnegative");
    if (!(c.lambda >= 0)) throw DataError("lambda must be nonnegative");
    if (c.k <= 0) throw DataError("k must be positive");
    if (c.dict_size < 0) throw DataError("dict_size must be nonnegative");
    if (c.dead_window_batches == 0) throw DataError("dead_window_batches must be positive");
    if (c.log_every == 0) throw DataError("log_every must be positive");
}

void apply_setting(TrainConfig& c, const std::string& key, const std::string& value) {
    if (key == "epochs") c.epochs = parse_number<std::size_t>(key, value);
    else if (key == "batch_size") c.batch_size = parse_number<std::size_t>(key, value);
    else if (key == "lr") c.lr = parse_number<double>(key, value);
    else if (key == "warmup_steps") c.warmup_steps = parse_number<std::size_t>(key, value);
    else if (key == "beta1") c.beta1 = parse_number<double>(key, value);
    else if (key == "beta2") c.beta2 = parse_number<double>(key, value);
    else if (key == "weight_decay") c.weight_decay = parse_number<double>(key, value);
    else if (key == "lambda") c.lambda = parse_number<double>(key, value);
    else if (key == "k") c.k = parse_number<Index>(key, value);
    else if (key == "dict_size") c.dict_size = parse_number<Index>(key, value);
    else if (key == "seed") c.seed = parse_number<std::uint64_t>(key, value);
    else if (key == "dead_window_batches") c.dead_window_batches = parse_number<std::size_t>(key, value);
    else if (key == "normalize_inputs") c.normalize_inputs = parse_bool(key, value);
    else if (key == "renormalize_decoder") c.renormalize_decoder = parse_bool(key, value);
    else if (key == "log_every") c.log_every = parse_number<std::size_t>(key, value);
    else throw DataError("unknown config key: " + key);
}

void apply_config_file(TrainConfig& config, const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path.string());
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected 'key = value'");
        apply_setting(config, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
}

TrainResult train(const EmbeddingDataset& dataset, const TrainConfig& config, const StepCallback& on_step) {
    validate(config);
    if (dataset.count() == 0) throw DataError("empty dataset");
    if (static_cast<std::size_t>(dataset.data.cols()) != dataset.dim) throw DataError("dimension mismatch");

    const auto dim = static_cast<Index>(dataset.dim);
    const Index dict = config.dict_size > 0 ? config.dict_size : 16 * dim;
    if (config.k > dict) throw DataError("k exceeds dictionary size");

    TrainResult result;
    result.model = init_sae<float>(dim, dict, config.k, config.seed);
    auto& model = result.model;
    auto& history = result.history;
    history.activation_counts.assign(static_cast<std::size_t>(dict), 0);
    history.final_epoch_counts.assign(static_cast<std::size_t>(dict), 0);
    if (config.epochs == 0) return result;

    // Centering is folded back into b_dec at the end so the checkpoint
    // operates on raw embeddings.
    RowMatrixXf centered;
    Vector<float> shift = Vector<float>::Zero(dim);
    if (config.normalize_inputs) {
        shift = compute_stats(dataset).mean.cast<float>();
        centered = dataset.data.rowwise() - shift.transpose();
    }
    const RowMatrixXf& data = config.normalize_inputs ? centered : dataset.data;

    auto adam = init_adam(model);
    const AdamHyper hyper{config.beta1, config.beta2, config.weight_decay};
    ThresholdCalibrator calibrator;
    std::vector<std::size_t> inactive_streak(static_cast<std::size_t>(dict), 0);
    BoolVector dead = BoolVector::Constant(dict, false);
    std::uint64_t step = 0;

    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        std::fill(history.final_epoch_counts.begin(), history.final_epoch_counts.end(), 0);
        const auto batches = epoch_batches(dataset.count(), config.batch_size, config.seed, epoch, true);
        for (const auto& rows : batches) {
            const RowMatrixXf x = gather_rows(data, rows);
            const RowMatrixXf pre = encode_pre(model, x);
            const auto sparse = batch_topk(pre, model.k);
            const RowMatrixXf x_hat = decode(model, sparse.codes);
            const auto breakdown = loss(x, x_hat, sparse.pre_activations, dead, config.lambda);
            const auto g = grads(model, x, sparse, dead, config.lambda);

            const double lr_t = lr_schedule(step, config.lr, config.warmup_steps);
            adam_step(adam, model, g, lr_t, hyper);
            if (config.renormalize_decoder) {
                for (Index j = 0; j < dict; ++j) {
                    const float norm = model.w_dec.row(j).norm();
                    if (norm > 0) model.w_dec.row(j) /= norm;
                }
            }

            float min_active = std::numeric_limits<float>::infinity();
            for (Index j = 0; j < dict; ++j) {
                std::uint64_t active = 0;
                for (Index r = 0; r < sparse.active_mask.rows(); ++r) {
                    if (sparse.active_mask(r, j)) {
                        ++active;
                        min_active = std::min(min_active, sparse.pre_activations(r, j));
                    }
                }
                const auto ju = static_cast<std::size_t>(j);
                history.activation_counts[ju] += active;
                history.final_epoch_counts[ju] += active;
                inactive_streak[ju] = active > 0 ? 0 : inactive_streak[ju] + 1;
            }
            if (std::isfinite(min_active)) calibrator.observe(min_active);

            StepRecord rec{step, lr_t, breakdown.total, breakdown.mse, breakdown.reanimation,
                           static_cast<std::size_t>(dead.count())};
            if (step % config.log_every == 0) history.steps.push_back(rec);
            if (on_step) on_step(rec);

            for (Index j = 0; j < dict; ++j)
                dead[j] = inactive_streak[static_cast<std::size_t>(j)] >= config.dead_window_batches;
            ++step;
        }
    }

    model.theta = static_cast<float>(calibrator.theta());
    if (config.normalize_inputs) model.b_dec += shift;

    if (step > 0) {
        auto report = evaluate(model, dataset, InferenceMode::PerSampleTopK);
        report.dead_fraction = dead_fraction(history.final_epoch_counts);
        history.final = report;
    }
    history.dead_fraction_cumulative = dead_fraction(history.activation_counts);
    return result;
}

void write_history(const TrainHistory& history, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    for (const auto& s : history.steps) {
        nlohmann::ordered_json j;
        j["step"] = s.step;
        j["lr"] = s.lr;
        j["loss"] = s.total;
        j["mse"] = s.mse;
        j["reanimation"] = s.reanimation;
        j["dead_count"] = s.dead_count;
        out << j.dump() << '\n';
    }
    if (!out) throw IoError("write failed: " + path.string());
}

} // namespace lsae
