#pragma once

#include <cstdint>
#include <ostream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "ota/align_head.hpp"
#include "ota/data_model.hpp"
#include "ota/losses.hpp"
#include "ota/supervision.hpp"

namespace ota {

struct WorldConfig {
  std::uint64_t seed = 7;
  std::size_t n_images = 4;
  std::size_t queries_per_image = 3;
  std::size_t max_attrs_per_query = 3;
  /// Extra prediction slots per image beyond one per object.
  std::size_t extra_slots = 2;
  std::size_t d_vis = 32;
  std::size_t d_txt = 32;
  ImageSize image_size{800, 800};
  /// Box jitter as a fraction of the image side.
  double jitter = 0.002;
  /// Second query of image 0 refers to the same box as its first.
  bool plant_multi_label = true;
};

struct ToyImage {
  AggregatedSample sample;
  std::vector<Box> pred_boxes;      // normalized frame
  Eigen::MatrixXd initial_features;  // n_pred x d_vis
};

struct ToyWorld {
  WorldConfig config;
  std::vector<ToyImage> images;
  /// Unit-norm embedding per distinct text.
  std::unordered_map<std::string, Eigen::VectorXd> embeddings;
  /// (image, object row in the full batch) of the planted multi-label box.
  std::vector<std::pair<std::size_t, std::size_t>> multi_label_objects;
};

/// Unit Gaussian direction seeded by (seed, text).
Eigen::VectorXd text_embedding(std::uint64_t seed, const std::string& text, std::size_t dim);

ToyWorld generate_world(const WorldConfig& cfg);

struct TrainConfig {
  std::size_t steps = 500;
  double lr = 0.5;
  LossWeights weights;
  MalConfig mal;
  SamplerConfig sampler{8, 4, 0, true};
  std::uint64_t seed = 11;
  bool shared_affine = false;
};

void validate_train_config(const TrainConfig& cfg);

struct TrainState {
  HeadParams<double> params;
  std::vector<Eigen::MatrixXd> features;  // per image
};

struct HistoryEntry {
  std::size_t step = 0;
  double total = 0.0;
  LossParts parts;
  std::size_t n_pos = 0;

  friend bool operator==(const HistoryEntry&, const HistoryEntry&) = default;
};

struct TrainResult {
  TrainState state;
  std::vector<HistoryEntry> history;
};

class TrainingDiverged : public std::runtime_error {
 public:
  explicit TrainingDiverged(std::size_t step)
      : std::runtime_error("training diverged at step " + std::to_string(step)), step_(step) {}
  std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

/// Head initialized from the train seed; features copied from the world.
TrainState initial_state(const ToyWorld& world, const TrainConfig& cfg);

/// Plain gradient descent on the image-averaged weighted loss, one fresh
/// expression draw per image per step. Throws TrainingDiverged on a
/// non-finite loss or gradient.
TrainResult train(const ToyWorld& world, const TrainConfig& cfg);

/// Weighted loss on full (unsampled) batches, averaged over images.
HistoryEntry full_objective(const ToyWorld& world, const TrainState& state, const TrainConfig& cfg);

struct Agreement {
  double positive_margin = 0.0;  // mean probability where planted = 1
  double negative_margin = 0.0;  // mean probability where planted = 0
  std::size_t positives = 0;
  std::size_t negatives = 0;
  std::size_t true_positives = 0;
  std::size_t true_negatives = 0;

  double tpr() const { return positives ? double(true_positives) / double(positives) : 1.0; }
  double tnr() const { return negatives ? double(true_negatives) / double(negatives) : 1.0; }
  /// Mean of the per-class agreement rates, so chance is 0.5.
  double balanced() const { return 0.5 * (tpr() + tnr()); }
  double raw() const {
    const auto n = positives + negatives;
    return n ? double(true_positives + true_negatives) / double(n) : 1.0;
  }
};

struct RecoveryReport {
  Agreement query;
  Agreement attr;
  double threshold = 0.5;
  std::size_t matched_rows = 0;
  /// Smallest query probability over the columns of planted multi-label
  /// objects; 1 when none are planted.
  double multi_label_min = 1.0;
};

RecoveryReport evaluate_recovery(const ToyWorld& world, const TrainState& state, const TrainConfig& cfg,
                                 double threshold = 0.5);

nlohmann::json to_json(const RecoveryReport& report);

/// step,total,l_query,l_attr,l_box,l_giou
void write_history_csv(std::ostream& out, const std::vector<HistoryEntry>& history);

}  // namespace ota
