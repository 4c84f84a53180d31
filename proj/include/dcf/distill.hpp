#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "dcf/common.hpp"
#include "dcf/nn.hpp"
#include "dcf/trajectory.hpp"

namespace dcf::distill {

// ---------------------------------------------------------------------------
// Composite loss
// ---------------------------------------------------------------------------

/// Aligned observed targets, student predictions and teacher predictions for
/// one batch, all on the normalized scale.
struct PredictionTriple {
    std::vector<double> observed;
    std::vector<double> student;
    std::vector<double> teacher;

    void validate() const;  // equal non-zero lengths
};

struct CompositeLoss {
    double value = 0.0;
    double observed_term = 0.0;  // MSE(observed, student)
    double teacher_term = 0.0;   // MSE(teacher, student)
    std::vector<double> grad;    // d value / d student[i]
};

/// L = alpha * MSE(observed, student) + (1 - alpha) * MSE(teacher, student).
/// The endpoints branch to the plain MSE code path, so alpha = 1 reproduces
/// ordinary supervised training bit-for-bit.
CompositeLoss composite_loss(const PredictionTriple& t, double alpha);

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TrainLogRow {
    int epoch = 0;
    double train_loss = 0.0;     // epoch mean of the optimized loss
    double student_loss = 0.0;   // observed-vs-prediction component
    double distill_loss = 0.0;   // teacher-vs-prediction component (0 without a teacher)
    double val_mse = 0.0;        // normalized scale
    double val_rmse = 0.0;       // m/s
};

struct TrainResult {
    nn::Weights weights;
    std::vector<TrainLogRow> log;
};

struct DistillConfig {
    double alpha = 0.5;
    nn::LstmSpec teacher_spec;
    const nn::Weights* teacher_weights = nullptr;  // frozen, never written
    nn::MlpSpec student;
    nn::OptimizerSpec optimizer;
    std::uint64_t seed = 0;
    /// Precompute teacher predictions for the whole training split once
    /// instead of per batch. Bitwise-equivalent (row results are independent
    /// of batch composition), just faster.
    bool cache_teacher = true;
};

TrainResult train_teacher(const Dataset& data, const nn::LstmSpec& spec,
                          const nn::OptimizerSpec& opt, std::uint64_t seed);

TrainResult train_student_plain(const Dataset& data, const nn::MlpSpec& spec,
                                const nn::OptimizerSpec& opt, std::uint64_t seed);

TrainResult train_kdnn(const Dataset& data, const DistillConfig& config);

// ---------------------------------------------------------------------------
// Alpha sweep
// ---------------------------------------------------------------------------

struct AlphaRow {
    double alpha = 0.0;
    double rmse = 0.0;          // test RMSE, m/s
    double diff_vs_student = 0.0;
};

struct SweepResult {
    std::vector<AlphaRow> rows;   // in ascending alpha order
    double student_rmse = 0.0;    // plain-student baseline, m/s
    double best_alpha = 0.0;
    double best_rmse = 0.0;
    nn::Weights best_weights;
    nn::Weights student_weights;
};

/// Trains the plain student once and one KDNN per alpha against the shared
/// frozen teacher, all from the same seed; reports test RMSE. Ties in the
/// argmin go to the larger alpha (more ground-truth weight).
SweepResult alpha_sweep(const Dataset& data, const nn::LstmSpec& teacher_spec,
                        const nn::Weights& teacher_weights, const nn::MlpSpec& student,
                        const nn::OptimizerSpec& opt, const std::vector<double>& alphas,
                        std::uint64_t seed, bool cache_teacher = true);

// ---------------------------------------------------------------------------
// Hyperparameter search
// ---------------------------------------------------------------------------

struct CvFold {
    std::vector<std::size_t> train;       // indices into the time-ordered window list
    std::vector<std::size_t> validation;  // strictly after every train index
};

/// Expanding-window folds: fold i trains on the first i/(k+1) of the windows
/// and validates on the next 1/(k+1) block.
std::vector<CvFold> timeseries_cv(std::size_t n_windows, int k = 3);

struct SearchSpace {
    int min_width = 16, max_width = 96;
    int min_epochs = 3, max_epochs = 8;
    double min_learning_rate = 1e-4, max_learning_rate = 5e-2;  // log-uniform
    int min_batch = 32, max_batch = 256;
    double min_dropout = 0.0, max_dropout = 0.5;
    int budget = 20;
    int folds = 3;

    void validate() const;
};

struct SampledConfig {
    std::vector<int> hidden;  // two widths
    double learning_rate = 0.0;
    int batch_size = 0;
    int epochs = 0;
    double dropout = 0.0;  // consumed by recurrent configs only
};

struct SearchResult {
    SampledConfig best;
    double best_score = 0.0;
    std::vector<std::pair<SampledConfig, double>> evaluated;  // in sample order
};

/// Draws `budget` configs (log-uniform learning rate, uniform integer
/// widths/batch/epochs) with per-sample seed partitioning and returns the
/// one minimizing the objective. Ties keep the earliest sample.
SearchResult random_search(const SearchSpace& space, std::uint64_t seed,
                           const std::function<double(const SampledConfig&)>& objective);

/// Mean expanding-window-fold validation MSE of a student trained with the
/// sampled config; the stock objective for random_search.
double student_cv_mse(const WindowSet& set, const NormalizationSpec& norm,
                      const SampledConfig& cfg, int folds, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Artifacts
// ---------------------------------------------------------------------------

/// CSV: epoch,train_loss,student_loss,distill_loss,val_mse,val_rmse
void write_train_log(const std::string& path, const std::vector<TrainLogRow>& log);

/// CSV: alpha,rmse,diff_vs_student followed by a best-alpha line.
void write_alpha_table(const std::string& path, const SweepResult& sweep);

}  // namespace dcf::distill
