#include "polypforge/classifier.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <numeric>
#include <sstream>

#include "log.hpp"
#include "polypforge/error.hpp"
#include "polypforge/metrics.hpp"

namespace polypforge::classify {

using nlohmann::json;
using nn::Var;

void validate(const ClassifierConfig& c) {
  auto check = [](bool ok, const std::string& why) { require(ok, ErrorKind::invalid_argument, why); };
  check(c.depth == 18 || c.depth == 34 || c.depth == 50,
        "classifier.depth must be 18, 34 or 50 (got " + std::to_string(c.depth) + ")");
  check(c.num_classes >= 2, "classifier.num_classes must be >= 2");
  check(c.epochs >= 1, "classifier.epochs must be >= 1");
  check(c.batch_size >= 1, "classifier.batch_size must be >= 1");
  check(c.learning_rate > 0.0, "classifier.learning_rate must be > 0");
  check(c.momentum >= 0.0 && c.momentum < 1.0, "classifier.momentum must lie in [0, 1)");
  check(c.weight_decay >= 0.0, "classifier.weight_decay must be >= 0");
  check(c.lr_step_epoch >= 1, "classifier.lr_step_epoch must be >= 1");
  check(c.input_size >= 8, "classifier.input_size must be >= 8");
  check(c.width >= 1, "classifier.width must be >= 1");
}

json to_json(const ClassifierConfig& c) {
  return {{"depth", c.depth},
          {"num_classes", c.num_classes},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"learning_rate", c.learning_rate},
          {"momentum", c.momentum},
          {"weight_decay", c.weight_decay},
          {"lr_step_epoch", c.lr_step_epoch},
          {"lr_gamma", c.lr_gamma},
          {"seed", c.seed},
          {"flips", c.flips},
          {"rotations", c.rotations},
          {"class_weighted", c.class_weighted},
          {"input_size", c.input_size},
          {"width", c.width},
          {"stem", c.stem == Stem::imagenet ? "imagenet" : "compact"}};
}

ClassifierConfig classifier_config_from_json(const json& j, const ClassifierConfig& base) {
  ClassifierConfig c = base;
  try {
    c.depth = j.value("depth", c.depth);
    c.num_classes = j.value("num_classes", c.num_classes);
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.momentum = j.value("momentum", c.momentum);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.lr_step_epoch = j.value("lr_step_epoch", c.lr_step_epoch);
    c.lr_gamma = j.value("lr_gamma", c.lr_gamma);
    c.seed = j.value("seed", c.seed);
    c.flips = j.value("flips", c.flips);
    c.rotations = j.value("rotations", c.rotations);
    c.class_weighted = j.value("class_weighted", c.class_weighted);
    c.input_size = j.value("input_size", c.input_size);
    c.width = j.value("width", c.width);
    if (j.contains("stem")) {
      const auto s = j.at("stem").get<std::string>();
      require(s == "imagenet" || s == "compact", ErrorKind::invalid_argument,
              "classifier.stem must be 'imagenet' or 'compact'");
      c.stem = s == "imagenet" ? Stem::imagenet : Stem::compact;
    }
  } catch (const json::exception& e) {
    fail(ErrorKind::invalid_argument, std::string("classifier config: ") + e.what());
  }
  return c;
}

ResNetSpec resnet_spec(const ClassifierConfig& c) {
  validate(c);
  ResNetSpec s;
  s.width = c.width;
  s.stem = c.stem;
  s.num_classes = c.num_classes;
  switch (c.depth) {
    case 18: s.stage_blocks = {2, 2, 2, 2}; break;
    case 34: s.stage_blocks = {3, 4, 6, 3}; break;
    case 50:
      s.stage_blocks = {3, 4, 6, 3};
      s.block = BlockKind::bottleneck;
      break;
  }
  return s;
}

struct ResNet::Block : nn::Module {
  std::vector<std::shared_ptr<nn::Conv2d>> convs;
  std::vector<std::shared_ptr<nn::BatchNorm2d>> bns;
  std::shared_ptr<nn::Conv2d> down_conv;
  std::shared_ptr<nn::BatchNorm2d> down_bn;

  Block(BlockKind kind, int in_ch, int planes, int stride, Rng& rng) {
    auto conv = [&](int i, int cin, int cout, int k, int s) {
      convs.push_back(register_module("conv" + std::to_string(i),
                                      std::make_shared<nn::Conv2d>(
                                          nn::Conv2d::Options{cin, cout, k, s, k / 2, nn::PadMode::zeros, false},
                                          rng, nn::Init::kaiming_normal)));
      bns.push_back(register_module("bn" + std::to_string(i), std::make_shared<nn::BatchNorm2d>(cout)));
    };
    int out_ch = planes;
    if (kind == BlockKind::basic) {
      conv(1, in_ch, planes, 3, stride);
      conv(2, planes, planes, 3, 1);
    } else {
      out_ch = planes * 4;
      conv(1, in_ch, planes, 1, 1);
      conv(2, planes, planes, 3, stride);
      conv(3, planes, out_ch, 1, 1);
    }
    if (stride != 1 || in_ch != out_ch) {
      down_conv = register_module("downsample.0", std::make_shared<nn::Conv2d>(
                                                      nn::Conv2d::Options{in_ch, out_ch, 1, stride, 0,
                                                                          nn::PadMode::zeros, false},
                                                      rng, nn::Init::kaiming_normal));
      down_bn = register_module("downsample.1", std::make_shared<nn::BatchNorm2d>(out_ch));
    }
  }

  Var forward(const Var& x) const {
    Var h = x;
    for (std::size_t i = 0; i < convs.size(); ++i) {
      h = bns[i]->forward(convs[i]->forward(h));
      if (i + 1 < convs.size()) h = nn::relu(h);
    }
    Var skip = down_conv ? down_bn->forward(down_conv->forward(x)) : x;
    return nn::relu(nn::add(h, skip));
  }
};

ResNet::ResNet(const ResNetSpec& spec, Rng& rng) : spec_(spec) {
  require(spec.num_classes >= 2 && spec.width >= 1 && !spec.stage_blocks.empty(), ErrorKind::invalid_argument,
          "invalid residual network spec");
  const int w = spec.width;
  if (spec.stem == Stem::imagenet) {
    stem_conv_ = register_module("conv1", std::make_shared<nn::Conv2d>(
                                              nn::Conv2d::Options{3, w, 7, 2, 3, nn::PadMode::zeros, false}, rng,
                                              nn::Init::kaiming_normal));
  } else {
    stem_conv_ = register_module("conv1", std::make_shared<nn::Conv2d>(
                                              nn::Conv2d::Options{3, w, 3, 1, 1, nn::PadMode::zeros, false}, rng,
                                              nn::Init::kaiming_normal));
  }
  stem_bn_ = register_module("bn1", std::make_shared<nn::BatchNorm2d>(w));
  const int expansion = spec.block == BlockKind::basic ? 1 : 4;
  int in_ch = w;
  for (std::size_t stage = 0; stage < spec.stage_blocks.size(); ++stage) {
    const int planes = w << stage;
    for (int b = 0; b < spec.stage_blocks[stage]; ++b) {
      const int stride = (stage > 0 && b == 0) ? 2 : 1;
      auto block = std::make_shared<Block>(spec.block, in_ch, planes, stride, rng);
      blocks_.push_back(register_module(
          "layer" + std::to_string(stage + 1) + "." + std::to_string(b), block));
      in_ch = planes * expansion;
    }
  }
  fc_ = register_module("fc", std::make_shared<nn::Linear>(in_ch, spec.num_classes, rng, nn::Init::kaiming_normal));
}

Var ResNet::forward(const Var& x) const {
  Var h = nn::relu(stem_bn_->forward(stem_conv_->forward(x)));
  if (spec_.stem == Stem::imagenet) h = nn::max_pool2d(h, 3, 2, 1);
  for (const auto& b : blocks_) h = b->forward(h);
  return fc_->forward(nn::global_avg_pool(h));
}

TrainedClassifier::TrainedClassifier(ClassifierConfig config, std::vector<std::string> labels)
    : config_(std::move(config)), labels_(std::move(labels)) {
  require(static_cast<int>(labels_.size()) == config_.num_classes, ErrorKind::invalid_argument,
          "classifier has " + std::to_string(config_.num_classes) + " classes but " +
              std::to_string(labels_.size()) + " labels were given");
  std::vector<std::string> sorted = labels_;
  std::sort(sorted.begin(), sorted.end());
  require(std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end(), ErrorKind::invalid_argument,
          "classifier labels must be unique");
  Rng rng(mix_seed(config_.seed, 0xC1A55));
  net_ = std::make_shared<ResNet>(resnet_spec(config_), rng);
  net_->eval();
}

int TrainedClassifier::label_index(std::string_view label) const {
  auto it = std::find(labels_.begin(), labels_.end(), label);
  require(it != labels_.end(), ErrorKind::unknown_class,
          "class '" + std::string(label) + "' is not known to the classifier");
  return static_cast<int>(it - labels_.begin());
}

bool TrainedClassifier::has_label(std::string_view label) const {
  return std::find(labels_.begin(), labels_.end(), label) != labels_.end();
}

std::string TrainedClassifier::id() const { return nn::module_hash(*net_); }

nn::Archive TrainedClassifier::to_archive() const {
  nn::Archive a;
  json history = json::array();
  for (const auto& h : history_) {
    history.push_back({{"epoch", h.epoch},
                       {"train_loss", h.train_loss},
                       {"train_accuracy", h.train_accuracy},
                       {"val_loss", h.val_loss},
                       {"val_accuracy", h.val_accuracy},
                       {"learning_rate", h.learning_rate}});
  }
  const auto& s = net_->spec();
  a.meta = {{"kind", "classifier"},
            {"architecture",
             {{"family", "resnet"},
              {"depth", config_.depth},
              {"block", s.block == BlockKind::basic ? "basic" : "bottleneck"},
              {"stage_blocks", s.stage_blocks},
              {"width", s.width},
              {"stem", s.stem == Stem::imagenet ? "imagenet" : "compact"},
              {"parameters", net_->parameter_count()}}},
            {"labels", labels_},
            {"config", to_json(config_)},
            {"history", history},
            {"parameter_hash", id()}};
  nn::store_module(a, *net_, "net.");
  return a;
}

TrainedClassifier TrainedClassifier::from_archive(const nn::Archive& a) {
  require(a.meta.value("kind", "") == "classifier", ErrorKind::format, "archive is not a classifier checkpoint");
  TrainedClassifier m(classifier_config_from_json(a.meta.at("config")),
                      a.meta.at("labels").get<std::vector<std::string>>());
  nn::load_module(a, *m.net_, "net.");
  for (const auto& h : a.meta.at("history")) {
    m.history_.push_back({h.at("epoch"), h.at("train_loss"), h.at("train_accuracy"), h.at("val_loss"),
                          h.at("val_accuracy"), h.at("learning_rate")});
  }
  return m;
}

void TrainedClassifier::save(const std::filesystem::path& path) const { to_archive().save(path); }

TrainedClassifier TrainedClassifier::load(const std::filesystem::path& path) {
  return from_archive(nn::Archive::load(path));
}

TrainedClassifier build_classifier(const ClassifierConfig& config, std::vector<std::string> labels) {
  validate(config);
  return TrainedClassifier(config, std::move(labels));
}

namespace {

int resize_target(const ClassifierConfig& c) {
  return static_cast<int>(std::lround(c.input_size * 256.0 / 224.0));
}

Image resize_shorter_side(const Image& image, int target) {
  if (image.width <= image.height) {
    const int h = static_cast<int>(std::lround(static_cast<double>(image.height) * target / image.width));
    return resize_bilinear(image, target, std::max(h, target));
  }
  const int w = static_cast<int>(std::lround(static_cast<double>(image.width) * target / image.height));
  return resize_bilinear(image, std::max(w, target), target);
}

}  // namespace

Image preprocess_train(const Image& image, const ClassifierConfig& c, Rng& rng) {
  Image out;
  if (image.width == c.input_size && image.height == c.input_size) {
    out = image;
  } else {
    Image r = resize_shorter_side(image, resize_target(c));
    const int x = static_cast<int>(rng.uniform_int(0, r.width - c.input_size));
    const int y = static_cast<int>(rng.uniform_int(0, r.height - c.input_size));
    out = crop(r, x, y, c.input_size, c.input_size);
  }
  if (c.flips) {
    if (rng.bernoulli(0.5)) out = flip_horizontal(out);
    if (rng.bernoulli(0.5)) out = flip_vertical(out);
  }
  if (c.rotations) out = rotate90(out, static_cast<int>(rng.uniform_int(0, 3)));
  return out;
}

Image preprocess_eval(const Image& image, const ClassifierConfig& c) {
  if (image.width == c.input_size && image.height == c.input_size) return image;
  Image r = resize_shorter_side(image, resize_target(c));
  return crop(r, (r.width - c.input_size) / 2, (r.height - c.input_size) / 2, c.input_size, c.input_size);
}

namespace {

void check_input_size(const TrainedClassifier& model, std::span<const data::ImageTile> tiles) {
  const int s = model.config().input_size;
  for (const auto& t : tiles) {
    require(t.width() == s && t.height() == s, ErrorKind::size_mismatch,
            "tile '" + t.id + "' is " + std::to_string(t.width()) + "x" + std::to_string(t.height()) +
                ", classifier expects " + std::to_string(s) + "x" + std::to_string(s));
  }
}

constexpr std::int64_t kInferenceBatch = 64;

struct EvalResult {
  double loss = 0.0;
  double accuracy = 0.0;
};

EvalResult evaluate_split(const TrainedClassifier& model, std::span<const data::ImageTile> tiles) {
  if (tiles.empty()) return {};
  std::vector<data::ImageTile> prepared;
  prepared.reserve(tiles.size());
  for (const auto& t : tiles) {
    data::ImageTile p;
    p.id = t.id;
    p.label = t.label;
    p.pixels = preprocess_eval(t.pixels, model.config());
    prepared.push_back(std::move(p));
  }
  const nn::Tensor probs = predict_proba(model, prepared);
  const auto c = static_cast<std::int64_t>(model.labels().size());
  double loss = 0.0;
  std::int64_t correct = 0;
  for (std::size_t i = 0; i < prepared.size(); ++i) {
    const int y = model.label_index(prepared[i].label);
    const auto row = static_cast<std::int64_t>(i) * c;
    loss -= std::log(std::max(probs[row + y], 1e-300));
    const auto best = std::max_element(probs.data() + row, probs.data() + row + c) - (probs.data() + row);
    correct += best == y ? 1 : 0;
  }
  const double n = static_cast<double>(prepared.size());
  return {loss / n, static_cast<double>(correct) / n};
}

}  // namespace

TrainedClassifier train_classifier(TrainedClassifier model, std::span<const data::ImageTile> train,
                                   std::span<const data::ImageTile> val) {
  const ClassifierConfig& cfg = model.config();
  require(!train.empty(), ErrorKind::empty_input, "training set is empty");
  const auto n_classes = static_cast<int>(model.labels().size());
  std::vector<std::int64_t> counts(static_cast<std::size_t>(n_classes), 0);
  std::vector<int> targets;
  targets.reserve(train.size());
  for (const auto& t : train) {
    const int y = model.label_index(t.label);
    counts[static_cast<std::size_t>(y)] += 1;
    targets.push_back(y);
  }
  for (int k = 0; k < n_classes; ++k) {
    require(counts[static_cast<std::size_t>(k)] > 0, ErrorKind::empty_input,
            "class '" + model.labels()[static_cast<std::size_t>(k)] + "' has no training examples");
  }
  for (const auto& t : val) model.label_index(t.label);

  std::vector<double> class_weights;
  if (cfg.class_weighted) {
    for (auto n : counts) {
      class_weights.push_back(static_cast<double>(train.size()) / (n_classes * static_cast<double>(n)));
    }
  }

  ResNet& net = model.network();
  nn::Sgd opt(net.named_parameters(), cfg.learning_rate, cfg.momentum, cfg.weight_decay);
  Rng rng(mix_seed(cfg.seed, 0x7A1));
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  auto& history = model.mutable_history();
  history.clear();

  const auto bs = static_cast<std::size_t>(cfg.batch_size);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cfg.learning_rate * std::pow(cfg.lr_gamma, epoch / cfg.lr_step_epoch);
    opt.set_learning_rate(lr);
    rng.shuffle(std::span(order));

    // Batch boundaries; a trailing singleton joins the previous batch so
    // batch statistics stay defined.
    std::vector<std::size_t> bounds;
    for (std::size_t b = 0; b < order.size(); b += bs) bounds.push_back(b);
    bounds.push_back(order.size());
    if (bounds.size() > 2 && bounds[bounds.size() - 1] - bounds[bounds.size() - 2] == 1) {
      bounds.erase(bounds.end() - 2);
    }

    net.train();
    double loss_sum = 0.0;
    std::int64_t correct = 0;
    for (std::size_t bi = 0; bi + 1 < bounds.size(); ++bi) {
      std::vector<Image> images;
      std::vector<int> ys;
      for (std::size_t k = bounds[bi]; k < bounds[bi + 1]; ++k) {
        images.push_back(preprocess_train(train[order[k]].pixels, cfg, rng));
        ys.push_back(targets[order[k]]);
      }
      Var x(images_to_tensor(images));
      Var logits = net.forward(x);
      Var loss = nn::cross_entropy(logits, ys, class_weights);
      if (!std::isfinite(loss.item())) {
        net.eval();
        fail(ErrorKind::non_finite, "non-finite classifier loss at epoch " + std::to_string(epoch + 1) +
                                        ", batch " + std::to_string(bi) + " (lr " + std::to_string(lr) + ")");
      }
      opt.zero_grad();
      loss.backward();
      opt.step();
      const auto nb = static_cast<double>(ys.size());
      loss_sum += loss.item() * nb;
      const auto& lv = logits.value();
      for (std::size_t r = 0; r < ys.size(); ++r) {
        const double* row = lv.data() + r * static_cast<std::size_t>(n_classes);
        correct += (std::max_element(row, row + n_classes) - row) == ys[r] ? 1 : 0;
      }
    }
    net.eval();
    EpochRecord rec;
    rec.epoch = epoch + 1;
    rec.train_loss = loss_sum / static_cast<double>(train.size());
    rec.train_accuracy = static_cast<double>(correct) / static_cast<double>(train.size());
    rec.learning_rate = lr;
    const auto v = evaluate_split(model, val);
    rec.val_loss = v.loss;
    rec.val_accuracy = v.accuracy;
    history.push_back(rec);
    log::debug("classifier epoch {}: loss {:.4f} acc {:.3f} val_acc {:.3f}", rec.epoch, rec.train_loss,
               rec.train_accuracy, rec.val_accuracy);
  }
  return model;
}

nn::Tensor predict_proba(const TrainedClassifier& model, std::span<const data::ImageTile> tiles) {
  check_input_size(model, tiles);
  const auto c = static_cast<std::int64_t>(model.labels().size());
  nn::Tensor out({static_cast<std::int64_t>(tiles.size()), c});
  nn::NoGradGuard no_grad;
  for (std::size_t b = 0; b < tiles.size(); b += kInferenceBatch) {
    const std::size_t e = std::min(tiles.size(), b + static_cast<std::size_t>(kInferenceBatch));
    std::vector<Image> images;
    for (std::size_t i = b; i < e; ++i) images.push_back(tiles[i].pixels);
    const nn::Tensor probs = nn::softmax_rows(model.network().forward(Var(images_to_tensor(images))).value());
    std::copy(probs.data(), probs.data() + probs.numel(), out.data() + static_cast<std::int64_t>(b) * c);
  }
  return out;
}

std::vector<int> predict_labels(const TrainedClassifier& model, std::span<const data::ImageTile> tiles) {
  const nn::Tensor probs = predict_proba(model, tiles);
  const auto c = static_cast<std::int64_t>(model.labels().size());
  std::vector<int> out;
  out.reserve(tiles.size());
  for (std::size_t i = 0; i < tiles.size(); ++i) {
    const double* row = probs.data() + static_cast<std::int64_t>(i) * c;
    out.push_back(static_cast<int>(std::max_element(row, row + c) - row));
  }
  return out;
}

double accuracy(const TrainedClassifier& model, std::span<const data::ImageTile> tiles) {
  require(!tiles.empty(), ErrorKind::empty_input, "accuracy of an empty set");
  const auto pred = predict_labels(model, tiles);
  std::int64_t correct = 0;
  for (std::size_t i = 0; i < tiles.size(); ++i) correct += pred[i] == model.label_index(tiles[i].label) ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(tiles.size());
}

double evaluate_auc(const TrainedClassifier& model, std::span<const data::ImageTile> test,
                    std::string_view positive_class) {
  const int pos = model.label_index(positive_class);
  bool any_pos = false, any_neg = false;
  for (const auto& t : test) (t.label == positive_class ? any_pos : any_neg) = true;
  require(any_pos && any_neg, ErrorKind::empty_input,
          "AUC test set must contain both '" + std::string(positive_class) + "' and other tiles");
  const nn::Tensor probs = predict_proba(model, test);
  const auto c = static_cast<std::int64_t>(model.labels().size());
  std::vector<double> scores;
  std::unique_ptr<bool[]> is_pos(new bool[test.size()]);
  for (std::size_t i = 0; i < test.size(); ++i) {
    scores.push_back(probs[static_cast<std::int64_t>(i) * c + pos]);
    is_pos[i] = test[i].label == positive_class;
  }
  return metrics::roc_auc(scores, std::span<const bool>(is_pos.get(), test.size()));
}

std::vector<SweepRow> depth_sweep(std::span<const int> depths, std::span<const data::ImageTile> train,
                                  std::span<const data::ImageTile> val, const ClassifierConfig& config,
                                  std::vector<std::string> labels) {
  require(depths.size() >= 2, ErrorKind::invalid_argument, "depth sweep needs at least two depths");
  std::vector<SweepRow> rows;
  for (int depth : depths) {
    ClassifierConfig c = config;
    c.depth = depth;
    const auto t0 = std::chrono::steady_clock::now();
    auto model = train_classifier(build_classifier(c, labels), train, val);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const double val_acc = val.empty() ? model.history().back().train_accuracy : accuracy(model, val);
    rows.push_back({depth, val_acc, model.network().parameter_count(), secs});
  }
  return rows;
}

std::string sweep_csv(std::span<const SweepRow> rows) {
  std::ostringstream os;
  os << "depth,val_accuracy,param_count,seconds\n";
  os.precision(6);
  for (const auto& r : rows) {
    os << r.depth << ',' << std::fixed << r.val_accuracy << ',' << r.param_count << ',' << r.seconds << '\n';
    os.unsetf(std::ios::fixed);
  }
  return os.str();
}

}  // namespace polypforge::classify
