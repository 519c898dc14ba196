#pragma once

#include <Eigen/Core>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "avbr/eval.hpp"
#include "avbr/fusion.hpp"
#include "avbr/loss.hpp"
#include "avbr/transformer.hpp"

namespace avbr {

enum class ClassifierKind { linear, mlp, temporal };

std::string_view to_string(ClassifierKind k);
std::optional<ClassifierKind> parse_classifier_kind(std::string_view s);

struct ClassifierConfig {
    ClassifierKind kind = ClassifierKind::linear;
    uint64_t seed = 0;
    std::vector<Modality> modalities;  // fixed (audio, visual, speech) order
    FusionSpec fusion;

    // linear / mlp
    int max_iterations = 3000;
    double l2 = 1.0;  // linear probe default; mlp factory sets 1e-4
    int hidden_units = 100;

    // temporal
    double learning_rate = 1e-3;
    int epochs = 100;
    int batch_size = 1024;
    int heads = 8;
    int ff_dim = 2048;
    double dropout = 0.1;
    bool use_class_weights = false;  // temporal factory sets true
    int val_every = 10;

    std::string to_json() const;
    static ClassifierConfig from_json(const std::string& text);
};

// Reference settings per classifier family.
ClassifierConfig default_classifier_config(ClassifierKind kind,
                                           std::vector<Modality> modalities,
                                           FusionSpec fusion);

struct TrainingLogEntry {
    int epoch = 0;          // 1-based epoch or iteration
    double loss = 0.0;
    double val_macro_f1 = -1.0;  // < 0 when not evaluated at this epoch
};

struct ClipDataset {
    std::vector<std::string> clip_ids;
    std::vector<Eigen::MatrixXd> modality_features;  // per modality, N x dim
    Eigen::MatrixXd truth;                           // N x 10 in {0,1}
};

struct WindowDataset {
    std::vector<WindowSequence> windows;
    std::vector<std::string> clip_ids;  // unique clips, split order
    Eigen::MatrixXd clip_truth;         // n_clips x 10
};

ClipDataset build_clip_dataset(const std::vector<const FeatureTable*>& tables,
                               const DatasetManifest& manifest, Split split);
WindowDataset build_window_dataset(const std::vector<const FeatureTable*>& tables,
                                   const DatasetManifest& manifest, Split split);

struct TrainingData {
    const ClipDataset* clips = nullptr;      // linear / mlp
    const WindowDataset* windows = nullptr;  // temporal
};

struct TrainedModel {
    ClassifierConfig config;
    std::map<std::string, Eigen::MatrixXd> tensors;
    std::vector<TrainingLogEntry> log;
};

// Trains per the configured family. Throws TrainingError on NaN loss or an
// empty train set. Deterministic for a fixed config + data.
TrainedModel train_classifier(const ClassifierConfig& config, const TrainingData& train,
                              const TrainingData& val, const LossConfig& loss);

inline constexpr double kDecisionThreshold = 0.5;

struct ClipPrediction {
    Eigen::VectorXd probabilities;  // size 10
    LabelMask labels;               // probability >= 0.5
};

// Clip-level probabilities for a whole dataset (rows follow dataset clip order;
// temporal models take the max over each clip's windows).
Eigen::MatrixXd predict_probabilities(const TrainedModel& model, const ClipDataset& data);
Eigen::MatrixXd predict_probabilities(const TrainedModel& model, const WindowDataset& data);

// Single-clip prediction.
ClipPrediction predict_clip(const TrainedModel& model,
                            const std::vector<Eigen::VectorXd>& modality_vectors);
ClipPrediction predict_clip(const TrainedModel& model,
                            const std::vector<WindowSequence>& clip_windows);

// Thresholded predictions next to ground truth, ready for evaluate().
PredictionMatrix prediction_matrix(const TrainedModel& model, const ClipDataset& data);
PredictionMatrix prediction_matrix(const TrainedModel& model, const WindowDataset& data);

// Single-file checkpoint: config + f32le tensor blob + training log + CRC.
void save_checkpoint(const TrainedModel& model, const std::string& path);
TrainedModel load_checkpoint(const std::string& path);
std::string checkpoint_bytes(const TrainedModel& model);
TrainedModel parse_checkpoint(const std::string& bytes);

}  // namespace avbr
