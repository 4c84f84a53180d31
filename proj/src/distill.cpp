#include "dcf/distill.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <type_traits>

namespace dcf::distill {

namespace {

constexpr std::size_t kEvalChunk = 512;

template <typename Spec>
struct CacheOf;
template <>
struct CacheOf<nn::MlpSpec> {
    using type = nn::MlpCache;
};
template <>
struct CacheOf<nn::LstmSpec> {
    using type = nn::LstmCache;
};

template <typename Spec>
std::vector<double> forward_any(const Spec& spec, const nn::Weights& w,
                                std::span<const double> batch, std::size_t n, int steps,
                                bool training, std::uint64_t mask_seed,
                                typename CacheOf<Spec>::type* cache) {
    if constexpr (std::is_same_v<Spec, nn::MlpSpec>) {
        (void)steps;
        (void)training;
        (void)mask_seed;
        return nn::mlp_forward(spec, w, batch, n, cache);
    } else {
        return nn::lstm_forward(spec, w, batch, n, steps, {training, mask_seed}, cache);
    }
}

template <typename Spec>
std::vector<double> backward_any(const Spec& spec, const nn::Weights& w,
                                 const typename CacheOf<Spec>::type& cache,
                                 std::span<const double> dpred) {
    if constexpr (std::is_same_v<Spec, nn::MlpSpec>)
        return nn::mlp_backward(spec, w, cache, dpred);
    else
        return nn::lstm_backward(spec, w, cache, dpred);
}

/// Inference-mode predictions over a whole tensor, chunked to bound memory.
/// Chunking cannot change the bits: each row's forward result is independent
/// of what else shares its batch.
template <typename Spec>
std::vector<double> predict_all(const Spec& spec, const nn::Weights& w,
                                const NormalizedData& data, int steps) {
    const std::size_t row = static_cast<std::size_t>(steps) * kChannels;
    std::vector<double> out;
    out.reserve(data.n);
    for (std::size_t start = 0; start < data.n; start += kEvalChunk) {
        const std::size_t bn = std::min(kEvalChunk, data.n - start);
        std::span<const double> batch(data.features.data() + start * row, bn * row);
        typename CacheOf<Spec>::type cache;
        std::vector<double> pred = forward_any(spec, w, batch, bn, steps, false, 0, &cache);
        out.insert(out.end(), pred.begin(), pred.end());
    }
    return out;
}

template <typename Spec>
double eval_mse(const Spec& spec, const nn::Weights& w, const NormalizedData& data, int steps) {
    if (data.n == 0) return std::numeric_limits<double>::quiet_NaN();
    const std::vector<double> pred = predict_all(spec, w, data, steps);
    double sse = 0.0;
    for (std::size_t i = 0; i < data.n; ++i) {
        const double d = pred[i] - data.targets[i];
        sse += d * d;
    }
    return sse / static_cast<double>(data.n);
}

using TeacherFn = std::function<std::vector<double>(
    std::span<const double> batch, std::size_t n, const std::vector<std::size_t>& rows)>;

template <typename Spec>
TrainResult train_core(const Spec& spec, const NormalizedData& train, const NormalizedData& val,
                       int steps, double denorm_scale, const nn::OptimizerSpec& opt,
                       std::uint64_t seed, const TeacherFn* teacher, double alpha) {
    opt.validate();
    if (train.n == 0) throw DataError("training split is empty");

    nn::Weights w = nn::init_weights(spec, seed);
    nn::OptimizerState ost = nn::make_optimizer(opt, w.data.size());

    const std::size_t row = static_cast<std::size_t>(steps) * kChannels;
    const std::size_t bsize = static_cast<std::size_t>(opt.batch_size);
    std::vector<std::size_t> order(train.n);

    TrainResult result;
    std::vector<double> batch_feats(bsize * row);
    std::vector<double> batch_targets(bsize);
    std::vector<std::size_t> batch_rows(bsize);

    for (int epoch = 0; epoch < opt.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng shuffle_rng(stage_seed(seed, "shuffle", static_cast<std::uint64_t>(epoch)));
        shuffle_rng.shuffle(order);

        double sum_loss = 0.0, sum_student = 0.0, sum_distill = 0.0;
        std::size_t batch_index = 0;
        for (std::size_t start = 0; start < train.n; start += bsize, ++batch_index) {
            const std::size_t bn = std::min(bsize, train.n - start);
            for (std::size_t i = 0; i < bn; ++i) {
                const std::size_t src = order[start + i];
                batch_rows[i] = src;
                batch_targets[i] = train.targets[src];
                std::copy_n(train.features.data() + src * row, row,
                            batch_feats.data() + i * row);
            }
            std::span<const double> feats(batch_feats.data(), bn * row);
            std::span<const double> targets(batch_targets.data(), bn);

            typename CacheOf<Spec>::type cache;
            const std::uint64_t mask_seed = stage_seed(
                seed, "dropout", static_cast<std::uint64_t>(epoch) * 1000003ull + batch_index);
            std::vector<double> pred = forward_any(spec, w, feats, bn, steps, true, mask_seed,
                                                   &cache);

            double loss_value = 0.0, student_term = 0.0, distill_term = 0.0;
            std::vector<double> dpred;
            if (teacher) {
                PredictionTriple triple;
                triple.observed.assign(targets.begin(), targets.end());
                triple.student = pred;
                triple.teacher = (*teacher)(feats, bn, batch_rows);
                CompositeLoss cl = composite_loss(triple, alpha);
                loss_value = cl.value;
                student_term = cl.observed_term;
                distill_term = cl.teacher_term;
                dpred = std::move(cl.grad);
            } else {
                nn::LossResult lr = nn::mse_loss(pred, targets);
                loss_value = lr.value;
                student_term = lr.value;
                dpred = std::move(lr.grad);
            }
            if (!std::isfinite(loss_value))
                throw DivergenceError("divergence detected", epoch,
                                      static_cast<int>(batch_index));

            std::vector<double> grads = backward_any(spec, w, cache, dpred);
            try {
                nn::optimizer_step(ost, w, grads);
            } catch (const DivergenceError& e) {
                throw DivergenceError(e.what(), epoch, static_cast<int>(batch_index));
            }

            const double weight = static_cast<double>(bn) / static_cast<double>(train.n);
            sum_loss += loss_value * weight;
            sum_student += student_term * weight;
            sum_distill += distill_term * weight;
        }

        TrainLogRow logrow;
        logrow.epoch = epoch;
        logrow.train_loss = sum_loss;
        logrow.student_loss = sum_student;
        logrow.distill_loss = sum_distill;
        logrow.val_mse = eval_mse(spec, w, val, steps);
        logrow.val_rmse = std::sqrt(logrow.val_mse) * denorm_scale;
        result.log.push_back(logrow);
    }
    result.weights = std::move(w);
    return result;
}

NormalizedData split_tensor(const Dataset& data, const std::vector<std::size_t>& subset) {
    return normalize_windows(data.windows, subset, data.norm);
}

void check_window_encoding(const Dataset& data) {
    if (data.windows.steps <= 0) throw ConfigError("dataset has no window steps");
}

}  // namespace

// ---------------------------------------------------------------------------
// Composite loss
// ---------------------------------------------------------------------------

void PredictionTriple::validate() const {
    if (observed.empty() || observed.size() != student.size() ||
        observed.size() != teacher.size())
        throw ConfigError("prediction triple needs equal non-zero lengths");
}

CompositeLoss composite_loss(const PredictionTriple& t, double alpha) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("alpha must lie in [0, 1]");
    t.validate();

    CompositeLoss out;
    // Endpoints reuse the plain-MSE code path so that alpha = 1 training is
    // bit-identical to ordinary supervised training (and alpha = 0 to pure
    // teacher regression). The off-endpoint blend below would match anyway,
    // but the explicit branch makes the identity structural.
    if (alpha == 1.0) {
        nn::LossResult lr = nn::mse_loss(t.student, t.observed);
        out.value = lr.value;
        out.observed_term = lr.value;
        out.teacher_term = nn::mse_loss(t.student, t.teacher).value;
        out.grad = std::move(lr.grad);
        return out;
    }
    if (alpha == 0.0) {
        nn::LossResult lr = nn::mse_loss(t.student, t.teacher);
        out.value = lr.value;
        out.observed_term = nn::mse_loss(t.student, t.observed).value;
        out.teacher_term = lr.value;
        out.grad = std::move(lr.grad);
        return out;
    }

    nn::LossResult obs = nn::mse_loss(t.student, t.observed);
    nn::LossResult tea = nn::mse_loss(t.student, t.teacher);
    out.observed_term = obs.value;
    out.teacher_term = tea.value;
    out.value = alpha * obs.value + (1.0 - alpha) * tea.value;
    out.grad.resize(obs.grad.size());
    for (std::size_t i = 0; i < out.grad.size(); ++i)
        out.grad[i] = alpha * obs.grad[i] + (1.0 - alpha) * tea.grad[i];
    return out;
}

// ---------------------------------------------------------------------------
// Training entry points
// ---------------------------------------------------------------------------

TrainResult train_teacher(const Dataset& data, const nn::LstmSpec& spec,
                          const nn::OptimizerSpec& opt, std::uint64_t seed) {
    spec.validate();
    check_window_encoding(data);
    if (spec.input_channels != kChannels)
        throw ConfigError("teacher input_channels " + std::to_string(spec.input_channels) +
                          " does not match the window encoding (" + std::to_string(kChannels) +
                          " channels)");
    const NormalizedData train = split_tensor(data, data.split.train);
    const NormalizedData val = split_tensor(data, data.split.validation);
    const double scale = data.norm.target_max - data.norm.target_min;
    return train_core(spec, train, val, data.windows.steps, scale, opt, seed, nullptr, 1.0);
}

TrainResult train_student_plain(const Dataset& data, const nn::MlpSpec& spec,
                                const nn::OptimizerSpec& opt, std::uint64_t seed) {
    spec.validate();
    check_window_encoding(data);
    if (spec.input_dim != data.windows.steps * kChannels)
        throw ConfigError("student input_dim " + std::to_string(spec.input_dim) +
                          " does not match the window encoding (" +
                          std::to_string(data.windows.steps * kChannels) + " values)");
    const NormalizedData train = split_tensor(data, data.split.train);
    const NormalizedData val = split_tensor(data, data.split.validation);
    const double scale = data.norm.target_max - data.norm.target_min;
    return train_core(spec, train, val, data.windows.steps, scale, opt, seed, nullptr, 1.0);
}

TrainResult train_kdnn(const Dataset& data, const DistillConfig& config) {
    if (!(config.alpha >= 0.0 && config.alpha <= 1.0))
        throw ConfigError("alpha must lie in [0, 1]");
    if (config.teacher_weights == nullptr) throw ConfigError("distillation needs a teacher");
    config.teacher_spec.validate();
    config.student.validate();
    check_window_encoding(data);

    const int steps = data.windows.steps;
    if (config.teacher_spec.input_channels != kChannels ||
        config.student.input_dim != steps * kChannels)
        throw ConfigError("teacher/student input encoding mismatch: teacher expects " +
                          std::to_string(config.teacher_spec.input_channels) +
                          " channels, student expects " + std::to_string(config.student.input_dim) +
                          " inputs, windows provide " + std::to_string(steps) + "x" +
                          std::to_string(kChannels));
    for (double v : config.teacher_weights->data)
        if (!std::isfinite(v)) throw ConfigError("teacher weights contain non-finite values");

    const NormalizedData train = split_tensor(data, data.split.train);
    const NormalizedData val = split_tensor(data, data.split.validation);
    const double scale = data.norm.target_max - data.norm.target_min;

    const nn::LstmSpec& tspec = config.teacher_spec;
    const nn::Weights& tw = *config.teacher_weights;

    std::vector<double> cached;
    TeacherFn fn;
    if (config.cache_teacher) {
        cached = predict_all(tspec, tw, train, steps);
        fn = [&cached](std::span<const double>, std::size_t n,
                       const std::vector<std::size_t>& rows) {
            std::vector<double> out(n);
            for (std::size_t i = 0; i < n; ++i) out[i] = cached[rows[i]];
            return out;
        };
    } else {
        fn = [&tspec, &tw, steps](std::span<const double> batch, std::size_t n,
                                  const std::vector<std::size_t>&) {
            return nn::lstm_forward(tspec, tw, batch, n, steps);
        };
    }

    return train_core(config.student, train, val, steps, scale, config.optimizer, config.seed,
                      &fn, config.alpha);
}

// ---------------------------------------------------------------------------
// Alpha sweep
// ---------------------------------------------------------------------------

SweepResult alpha_sweep(const Dataset& data, const nn::LstmSpec& teacher_spec,
                        const nn::Weights& teacher_weights, const nn::MlpSpec& student,
                        const nn::OptimizerSpec& opt, const std::vector<double>& alphas,
                        std::uint64_t seed, bool cache_teacher) {
    if (alphas.empty()) throw ConfigError("alpha sweep needs at least one alpha");
    for (double a : alphas)
        if (!(a >= 0.0 && a <= 1.0)) throw ConfigError("alpha must lie in [0, 1]");

    std::vector<double> sorted = alphas;
    std::sort(sorted.begin(), sorted.end());

    const NormalizedData test = split_tensor(data, data.split.test);
    if (test.n == 0) throw DataError("test split is empty");
    const double scale = data.norm.target_max - data.norm.target_min;

    SweepResult result;
    TrainResult plain = train_student_plain(data, student, opt, seed);
    result.student_rmse =
        std::sqrt(eval_mse(student, plain.weights, test, data.windows.steps)) * scale;
    result.student_weights = std::move(plain.weights);

    bool have_best = false;
    for (double a : sorted) {
        DistillConfig cfg;
        cfg.alpha = a;
        cfg.teacher_spec = teacher_spec;
        cfg.teacher_weights = &teacher_weights;
        cfg.student = student;
        cfg.optimizer = opt;
        cfg.seed = seed;
        cfg.cache_teacher = cache_teacher;
        TrainResult run = train_kdnn(data, cfg);
        const double rmse =
            std::sqrt(eval_mse(student, run.weights, test, data.windows.steps)) * scale;
        result.rows.push_back({a, rmse, rmse - result.student_rmse});
        // Ascending alpha + "<=" leaves ties holding the larger alpha.
        if (!have_best || rmse <= result.best_rmse) {
            have_best = true;
            result.best_rmse = rmse;
            result.best_alpha = a;
            result.best_weights = std::move(run.weights);
        }
    }
    return result;
}

// ---------------------------------------------------------------------------
// Hyperparameter search
// ---------------------------------------------------------------------------

std::vector<CvFold> timeseries_cv(std::size_t n_windows, int k) {
    if (k < 1) throw ConfigError("cv fold count must be >= 1");
    if (n_windows < static_cast<std::size_t>(k) + 1)
        throw DataError("fewer windows (" + std::to_string(n_windows) + ") than folds + 1 (" +
                        std::to_string(k + 1) + ")");
    std::vector<CvFold> folds;
    const std::size_t parts = static_cast<std::size_t>(k) + 1;
    for (std::size_t i = 1; i <= static_cast<std::size_t>(k); ++i) {
        const std::size_t train_end = n_windows * i / parts;
        const std::size_t val_end = n_windows * (i + 1) / parts;
        CvFold f;
        f.train.resize(train_end);
        std::iota(f.train.begin(), f.train.end(), std::size_t{0});
        f.validation.resize(val_end - train_end);
        std::iota(f.validation.begin(), f.validation.end(), train_end);
        folds.push_back(std::move(f));
    }
    return folds;
}

void SearchSpace::validate() const {
    if (budget < 1) throw ConfigError("search budget must be >= 1");
    if (folds < 1) throw ConfigError("cv fold count must be >= 1");
    if (min_width < 1 || max_width < min_width) throw ConfigError("bad width range");
    if (min_epochs < 1 || max_epochs < min_epochs) throw ConfigError("bad epoch range");
    if (min_batch < 1 || max_batch < min_batch) throw ConfigError("bad batch range");
    if (!(min_learning_rate > 0.0) || max_learning_rate < min_learning_rate)
        throw ConfigError("bad learning-rate range");
    if (min_dropout < 0.0 || max_dropout >= 1.0 || max_dropout < min_dropout)
        throw ConfigError("bad dropout range");
}

SearchResult random_search(const SearchSpace& space, std::uint64_t seed,
                           const std::function<double(const SampledConfig&)>& objective) {
    space.validate();
    SearchResult result;
    bool have_best = false;
    for (int i = 0; i < space.budget; ++i) {
        Rng rng(stage_seed(seed, "search", static_cast<std::uint64_t>(i)));
        SampledConfig c;
        const auto draw_int = [&rng](int lo, int hi) {
            return lo + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(hi - lo + 1)));
        };
        c.hidden = {draw_int(space.min_width, space.max_width),
                    draw_int(space.min_width, space.max_width)};
        c.learning_rate = std::exp(
            rng.uniform(std::log(space.min_learning_rate), std::log(space.max_learning_rate)));
        c.batch_size = draw_int(space.min_batch, space.max_batch);
        c.epochs = draw_int(space.min_epochs, space.max_epochs);
        c.dropout = rng.uniform(space.min_dropout, space.max_dropout);

        const double score = objective(c);
        result.evaluated.emplace_back(c, score);
        if (!have_best || score < result.best_score) {
            have_best = true;
            result.best_score = score;
            result.best = c;
        }
    }
    return result;
}

double student_cv_mse(const WindowSet& set, const NormalizationSpec& norm,
                      const SampledConfig& cfg, int folds, std::uint64_t seed) {
    const std::vector<CvFold> cv = timeseries_cv(set.windows.size(), folds);
    const double scale = norm.target_max - norm.target_min;
    double total = 0.0;
    for (std::size_t f = 0; f < cv.size(); ++f) {
        const NormalizedData train = normalize_windows(set, cv[f].train, norm);
        const NormalizedData val = normalize_windows(set, cv[f].validation, norm);
        nn::MlpSpec spec;
        spec.input_dim = set.steps * kChannels;
        spec.hidden = cfg.hidden;
        nn::OptimizerSpec opt;
        opt.learning_rate = cfg.learning_rate;
        opt.batch_size = cfg.batch_size;
        opt.epochs = cfg.epochs;
        TrainResult run = train_core(spec, train, val, set.steps, scale, opt,
                                     stage_seed(seed, "cvfold", f), nullptr, 1.0);
        total += run.log.back().val_mse;
    }
    return total / static_cast<double>(cv.size());
}

// ---------------------------------------------------------------------------
// Artifacts
// ---------------------------------------------------------------------------

void write_train_log(const std::string& path, const std::vector<TrainLogRow>& log) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw DataError(path + ": cannot open for writing");
    f << "epoch,train_loss,student_loss,distill_loss,val_mse,val_rmse\n";
    for (const TrainLogRow& r : log)
        f << r.epoch << ',' << fmt_g(r.train_loss) << ',' << fmt_g(r.student_loss) << ','
          << fmt_g(r.distill_loss) << ',' << fmt_g(r.val_mse) << ',' << fmt_g(r.val_rmse)
          << '\n';
    if (!f) throw DataError(path + ": write failed");
}

void write_alpha_table(const std::string& path, const SweepResult& sweep) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw DataError(path + ": cannot open for writing");
    f << "alpha,rmse,diff_vs_student\n";
    for (const AlphaRow& r : sweep.rows)
        f << fmt_g(r.alpha) << ',' << fmt_g(r.rmse) << ',' << fmt_g(r.diff_vs_student) << '\n';
    f << "best," << fmt_g(sweep.best_alpha) << ',' << fmt_g(sweep.best_rmse) << '\n';
    if (!f) throw DataError(path + ": write failed");
}

}  // namespace dcf::distill
