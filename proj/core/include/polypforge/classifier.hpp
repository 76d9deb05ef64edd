#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <nlohmann/json.hpp>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "polypforge/dataset.hpp"
#include "polypforge/nn/archive.hpp"
#include "polypforge/nn/module.hpp"

namespace polypforge::classify {

/// `imagenet`: 7×7 stride-2 convolution plus max-pool (standard residual
/// stem). `compact`: a single 3×3 stride-1 convolution for small tiles.
enum class Stem { imagenet, compact };

struct ClassifierConfig {
  int depth = 18;  // 18, 34 or 50
  int num_classes = 2;
  int epochs = 20;
  int batch_size = 32;
  double learning_rate = 1e-3;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  int lr_step_epoch = 15;
  double lr_gamma = 0.1;
  std::uint64_t seed = 0;
  bool flips = true;
  bool rotations = false;
  bool class_weighted = false;
  int input_size = 224;
  int width = 64;  // channels of the first stage
  Stem stem = Stem::imagenet;
};

void validate(const ClassifierConfig& config);
nlohmann::json to_json(const ClassifierConfig& config);
/// Missing keys keep their defaults.
ClassifierConfig classifier_config_from_json(const nlohmann::json& j,
                                             const ClassifierConfig& base = {});

enum class BlockKind { basic, bottleneck };

struct ResNetSpec {
  BlockKind block = BlockKind::basic;
  std::vector<int> stage_blocks{2, 2, 2, 2};
  int width = 64;
  Stem stem = Stem::imagenet;
  int num_classes = 2;
};

/// Residual topology for the 18/34/50-layer presets.
ResNetSpec resnet_spec(const ClassifierConfig& config);

class ResNet : public nn::Module {
 public:
  ResNet(const ResNetSpec& spec, Rng& rng);
  /// [N, 3, H, W] in [-1, 1] -> logits [N, num_classes]
  nn::Var forward(const nn::Var& x) const;
  const ResNetSpec& spec() const noexcept { return spec_; }

 private:
  struct Block;
  ResNetSpec spec_;
  std::shared_ptr<nn::Conv2d> stem_conv_;
  std::shared_ptr<nn::BatchNorm2d> stem_bn_;
  std::vector<std::shared_ptr<Block>> blocks_;
  std::shared_ptr<nn::Linear> fc_;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;
  double learning_rate = 0.0;
};

/// A residual classifier with its label ordering and training history. The
/// network is left in evaluation mode outside of training, so inference does
/// not mutate it.
class TrainedClassifier {
 public:
  TrainedClassifier(ClassifierConfig config, std::vector<std::string> labels);

  const ClassifierConfig& config() const noexcept { return config_; }
  const std::vector<std::string>& labels() const noexcept { return labels_; }
  /// Index of `label`, or ErrorKind::unknown_class.
  int label_index(std::string_view label) const;
  bool has_label(std::string_view label) const;

  ResNet& network() { return *net_; }
  const ResNet& network() const { return *net_; }
  const std::vector<EpochRecord>& history() const noexcept { return history_; }
  std::vector<EpochRecord>& mutable_history() noexcept { return history_; }

  /// SHA-256 of the parameters and buffers.
  std::string id() const;

  nn::Archive to_archive() const;
  static TrainedClassifier from_archive(const nn::Archive& archive);
  void save(const std::filesystem::path& path) const;
  static TrainedClassifier load(const std::filesystem::path& path);

 private:
  ClassifierConfig config_;
  std::vector<std::string> labels_;
  std::shared_ptr<ResNet> net_;
  std::vector<EpochRecord> history_;
};

/// Fresh network with seeded He initialization. Labels fix the output order.
TrainedClassifier build_classifier(const ClassifierConfig& config, std::vector<std::string> labels);

/// Fits the model in place and returns it. Every model label needs at least
/// one training tile; tiles with labels outside the model are rejected.
TrainedClassifier train_classifier(TrainedClassifier model, std::span<const data::ImageTile> train,
                                   std::span<const data::ImageTile> val);

/// Training-time preprocessing: random crop of a resized image (or the tile
/// itself when it already has the input size) plus optional flips/rotations.
Image preprocess_train(const Image& image, const ClassifierConfig& config, Rng& rng);
/// Evaluation-time preprocessing: resize shorter side then center crop, or
/// identity for tiles already at the input size.
Image preprocess_eval(const Image& image, const ClassifierConfig& config);

/// [N, C] class probabilities. Tiles must already be input_size × input_size.
nn::Tensor predict_proba(const TrainedClassifier& model, std::span<const data::ImageTile> tiles);
/// Row-wise argmax of predict_proba.
std::vector<int> predict_labels(const TrainedClassifier& model, std::span<const data::ImageTile> tiles);

double accuracy(const TrainedClassifier& model, std::span<const data::ImageTile> tiles);

/// AUC of P(positive_class) against tile labels (positive vs everything else).
double evaluate_auc(const TrainedClassifier& model, std::span<const data::ImageTile> test,
                    std::string_view positive_class);

struct SweepRow {
  int depth = 0;
  double val_accuracy = 0.0;
  std::int64_t param_count = 0;
  double seconds = 0.0;
};

std::vector<SweepRow> depth_sweep(std::span<const int> depths, std::span<const data::ImageTile> train,
                                  std::span<const data::ImageTile> val, const ClassifierConfig& config,
                                  std::vector<std::string> labels);

/// Header `depth,val_accuracy,param_count,seconds`.
std::string sweep_csv(std::span<const SweepRow> rows);

}  // namespace polypforge::classify
