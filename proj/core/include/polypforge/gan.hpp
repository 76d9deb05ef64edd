#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <nlohmann/json.hpp>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "polypforge/dataset.hpp"
#include "polypforge/error.hpp"
#include "polypforge/nn/archive.hpp"
#include "polypforge/nn/module.hpp"
#include "polypforge/nn/optim.hpp"

namespace polypforge::gan {

enum class AdversarialForm { least_squares, bce };

struct GanConfig {
  int image_size = 224;
  int ngf = 64;
  int ndf = 64;
  int generator_blocks = 0;  // 0: 9 above 128 px, else 6
  int downsamplings = 2;
  int stem_kernel = 7;
  int discriminator_layers = 3;
  AdversarialForm adversarial = AdversarialForm::least_squares;
  double lambda_cyc = 10.0;
  double lambda_id = 5.0;
  double learning_rate = 2e-4;
  double beta1 = 0.5;
  int epochs = 200;
  std::vector<int> checkpoint_schedule{5, 10, 25, 50, 100, 200};
  int pool_size = 50;
  int batch_size = 1;
  bool flips = true;
  std::uint64_t seed = 0;

  int resolved_generator_blocks() const noexcept {
    return generator_blocks > 0 ? generator_blocks : (image_size > 128 ? 9 : 6);
  }
};

void validate(const GanConfig& config);
/// Schedule entries beyond `epochs` are dropped with a warning.
std::vector<int> effective_schedule(const GanConfig& config);
nlohmann::json to_json(const GanConfig& config);
GanConfig gan_config_from_json(const nlohmann::json& j, const GanConfig& base = {});

/// Residual encoder/decoder translator. Downsampling uses stride-2
/// convolutions; upsampling uses nearest-neighbour resize followed by a
/// convolution. Output passes through tanh, so values lie in [-1, 1].
class ResnetGenerator : public nn::Module {
 public:
  struct Options {
    int channels = 3;
    int ngf = 64;
    int blocks = 9;
    int downsamplings = 2;
    int stem_kernel = 7;
  };
  ResnetGenerator(const Options& opts, Rng& rng);
  nn::Var forward(const nn::Var& x) const;
  const Options& options() const noexcept { return opts_; }

 private:
  struct Block;
  Options opts_;
  std::vector<std::shared_ptr<nn::Conv2d>> encoder_;
  std::vector<std::shared_ptr<nn::InstanceNorm2d>> encoder_norms_;
  std::vector<std::shared_ptr<Block>> blocks_;
  std::vector<std::shared_ptr<nn::Conv2d>> decoder_;
  std::vector<std::shared_ptr<nn::InstanceNorm2d>> decoder_norms_;
  std::shared_ptr<nn::Conv2d> head_;
};

/// Fully convolutional patch critic: one score per receptive field.
class PatchDiscriminator : public nn::Module {
 public:
  PatchDiscriminator(int channels, int ndf, int layers, Rng& rng);
  nn::Var forward(const nn::Var& x) const;

 private:
  std::vector<std::shared_ptr<nn::Conv2d>> convs_;
  std::vector<std::shared_ptr<nn::InstanceNorm2d>> norms_;
};

/// History of generated images shown to the discriminators. Until full, every
/// query is stored and returned; afterwards each query returns, with
/// probability 1/2, a stored image (replaced by the query), else the query.
class ImagePool {
 public:
  ImagePool(int capacity, std::uint64_t seed);
  /// One image [1, C, H, W]. Sets `from_pool` when a stored image is returned.
  nn::Tensor query_one(const nn::Tensor& image, bool* from_pool = nullptr);
  /// Applies query_one to every sample of [N, C, H, W].
  nn::Tensor query(const nn::Tensor& batch);
  std::size_t size() const noexcept { return images_.size(); }
  int capacity() const noexcept { return capacity_; }

 private:
  int capacity_;
  Rng rng_;
  std::vector<nn::Tensor> images_;
};

using Mapping = std::function<nn::Var(const nn::Var&)>;

enum class Target { real, fake };

/// mean |F(G(x)) - x|
nn::Var cycle_consistency_loss(const nn::Var& x, const Mapping& G, const Mapping& F);
/// Least squares: mean (D - 1)² for real, mean D² for fake. BCE: logits
/// against 1 or 0.
nn::Var adversarial_loss(const nn::Var& discriminator_output, Target target,
                         AdversarialForm form = AdversarialForm::least_squares);

struct GeneratorLoss {
  nn::Var total;
  nn::Var adversarial_G;  // D_Y(G(x)) judged real
  nn::Var adversarial_F;  // D_X(F(y)) judged real
  nn::Var cycle;          // both directions, unweighted
  nn::Var identity;       // both directions, unweighted
  nn::Var fake_x;         // F(y)
  nn::Var fake_y;         // G(x)
};

/// adversarial + λ_cyc·cycle + λ_id·identity over a batch of x and y.
GeneratorLoss generator_loss(const nn::Var& x, const nn::Var& y, const ResnetGenerator& G,
                             const ResnetGenerator& F, const PatchDiscriminator& D_X,
                             const PatchDiscriminator& D_Y, const GanConfig& config);

/// Generators G: X→Y and F: Y→X, discriminators D_X and D_Y, their
/// optimizers and the epoch counter.
struct GanBundle {
  GanConfig config;
  std::shared_ptr<ResnetGenerator> G, F;
  std::shared_ptr<PatchDiscriminator> D_X, D_Y;
  std::unique_ptr<nn::Adam> opt_G, opt_D;
  int epoch = 0;

  nn::Archive to_archive() const;
  static GanBundle from_archive(const nn::Archive& archive);
};

GanBundle build_cyclegan(const GanConfig& config);

/// Serialized network state tagged with the epoch it was taken at. `id` is
/// the SHA-256 of the serialized bytes.
struct Checkpoint {
  std::string kind;  // "cyclegan" or "dcgan"
  int epoch = 0;
  std::string id;
  std::vector<std::uint8_t> bytes;

  static Checkpoint from_archive(const nn::Archive& archive, std::string kind, int epoch);
  nn::Archive archive() const;
  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);
};

struct CycleEpochLoss {
  int epoch = 0;
  double loss_G = 0, loss_F = 0, loss_D_X = 0, loss_D_Y = 0, loss_cyc = 0, loss_id = 0;
};

/// Header `epoch,loss_G,loss_F,loss_D_X,loss_D_Y,loss_cyc,loss_id`.
std::string cycle_loss_csv(std::span<const CycleEpochLoss> log);

using CheckpointSink = std::function<void(const Checkpoint&)>;

struct CycleGanResult {
  Checkpoint final;
  std::vector<Checkpoint> checkpoints;  // scheduled epochs only
  std::vector<CycleEpochLoss> log;
};

/// Raised when a loss turns non-finite. Carries the most recent checkpoint.
class TrainingDiverged : public Error {
 public:
  TrainingDiverged(const std::string& message, int epoch, std::optional<Checkpoint> last_good)
      : Error(ErrorKind::non_finite, message), epoch_(epoch), last_good_(std::move(last_good)) {}
  int epoch() const noexcept { return epoch_; }
  const std::optional<Checkpoint>& last_good() const noexcept { return last_good_; }

 private:
  int epoch_;
  std::optional<Checkpoint> last_good_;
};

/// Trains a fresh bundle on unpaired X and Y tiles. Checkpoints are taken at
/// every scheduled epoch and handed to `sink` as they are made.
CycleGanResult train_cyclegan(std::span<const data::ImageTile> X, std::span<const data::ImageTile> Y,
                              const GanConfig& config, const CheckpointSink& sink = {});
/// Continues training `bundle` until config.epochs.
CycleGanResult train_cyclegan(GanBundle& bundle, std::span<const data::ImageTile> X,
                              std::span<const data::ImageTile> Y, const CheckpointSink& sink = {});

enum class Direction { x_to_y, y_to_x };

/// Maps each tile through `generator`. Outputs are synthetic, labelled
/// `target_label`, with source_ref = input id and generator_ref =
/// `generator_ref`.
std::vector<data::ImageTile> translate(const ResnetGenerator& generator, std::string_view generator_ref,
                                       std::span<const data::ImageTile> tiles, std::string_view target_label);
/// Loads the generator for `direction` from a CycleGAN checkpoint.
std::vector<data::ImageTile> translate(const Checkpoint& checkpoint, Direction direction,
                                       std::span<const data::ImageTile> tiles, std::string_view target_label);

// ---------------------------------------------------------------------------
// DCGAN baseline

struct DcganConfig {
  int image_size = 224;
  int latent = 100;
  int ngf = 64;
  int ndf = 64;
  double learning_rate = 2e-4;
  double beta1 = 0.5;
  int epochs = 25;
  int batch_size = 64;
  std::vector<int> checkpoint_schedule{};
  std::uint64_t seed = 0;
};

void validate(const DcganConfig& config);
nlohmann::json to_json(const DcganConfig& config);
DcganConfig dcgan_config_from_json(const nlohmann::json& j, const DcganConfig& base = {});

/// Noise vector to image: a linear projection onto a small seed grid, then
/// repeated upsample + conv + batch norm + ReLU stages, tanh output.
class DcganGenerator : public nn::Module {
 public:
  DcganGenerator(const DcganConfig& config, Rng& rng);
  /// z: [N, latent]. Batch statistics are used in every mode; running
  /// estimates only move while training.
  nn::Var forward(const nn::Var& z) const;

 private:
  int latent_, base_, base_channels_;
  std::shared_ptr<nn::Linear> project_;
  std::shared_ptr<nn::BatchNorm2d> project_norm_;
  std::vector<std::shared_ptr<nn::Conv2d>> convs_;
  std::vector<std::shared_ptr<nn::BatchNorm2d>> norms_;
  std::shared_ptr<nn::Conv2d> head_;
};

class DcganDiscriminator : public nn::Module {
 public:
  DcganDiscriminator(const DcganConfig& config, Rng& rng);
  /// Logits [N, 1].
  nn::Var forward(const nn::Var& x) const;

 private:
  std::vector<std::shared_ptr<nn::Conv2d>> convs_;
  std::vector<std::shared_ptr<nn::BatchNorm2d>> norms_;
  std::shared_ptr<nn::Linear> head_;
};

struct DcganEpochLoss {
  int epoch = 0;
  double loss_G = 0, loss_D = 0;
};

struct DcganResult {
  Checkpoint final;
  std::vector<Checkpoint> checkpoints;
  std::vector<DcganEpochLoss> log;
};

DcganResult train_dcgan(std::span<const data::ImageTile> Y, const DcganConfig& config,
                        const CheckpointSink& sink = {});
/// `n` tiles from noise drawn with `seed`; labelled `label`.
std::vector<data::ImageTile> sample_dcgan(const Checkpoint& checkpoint, int n, std::uint64_t seed,
                                          std::string_view label);
std::string dcgan_loss_csv(std::span<const DcganEpochLoss> log);

}  // namespace polypforge::gan
