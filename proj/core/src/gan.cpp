#include "polypforge/gan.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>
#include <set>
#include <sstream>

#include "log.hpp"
#include "polypforge/hash.hpp"
#include "polypforge/image.hpp"

namespace polypforge::gan {

using nlohmann::json;
using nn::Tensor;
using nn::Var;

// ---------------------------------------------------------------------------
// Configuration

namespace {

void check(bool ok, const std::string& why) { require(ok, ErrorKind::invalid_argument, why); }

std::string_view form_name(AdversarialForm f) { return f == AdversarialForm::bce ? "bce" : "least_squares"; }

AdversarialForm parse_form(const std::string& s) {
  if (s == "least_squares" || s == "lsgan") return AdversarialForm::least_squares;
  if (s == "bce") return AdversarialForm::bce;
  fail(ErrorKind::invalid_argument, "gan.adversarial must be 'least_squares' or 'bce', got '" + s + "'");
}

}  // namespace

void validate(const GanConfig& c) {
  check(c.ngf >= 1 && c.ndf >= 1, "gan.ngf and gan.ndf must be >= 1");
  check(c.generator_blocks >= 0, "gan.generator_blocks must be >= 0");
  check(c.downsamplings >= 0 && c.downsamplings <= 6, "gan.downsamplings must lie in [0, 6]");
  check(c.stem_kernel >= 1 && c.stem_kernel % 2 == 1, "gan.stem_kernel must be odd");
  check(c.discriminator_layers >= 1, "gan.discriminator_layers must be >= 1");
  check(c.lambda_cyc >= 0.0, "gan.lambda_cyc must be >= 0");
  check(c.lambda_id >= 0.0, "gan.lambda_id must be >= 0");
  check(c.learning_rate > 0.0, "gan.learning_rate must be > 0");
  check(c.beta1 >= 0.0 && c.beta1 < 1.0, "gan.beta1 must lie in [0, 1)");
  check(c.epochs >= 1, "gan.epochs must be >= 1");
  check(c.pool_size >= 0, "gan.pool_size must be >= 0");
  check(c.batch_size >= 1, "gan.batch_size must be >= 1");
  for (int e : c.checkpoint_schedule) check(e >= 1, "gan.checkpoint_schedule entries must be >= 1");
  const int factor = 1 << c.downsamplings;
  check(c.image_size >= 8 && c.image_size % factor == 0,
        "gan.image_size " + std::to_string(c.image_size) + " is not divisible by the downsampling factor " +
            std::to_string(factor));
  check(c.stem_kernel / 2 < c.image_size, "gan.stem_kernel too large for gan.image_size");
  check((c.image_size >> c.discriminator_layers) >= 3,
        "gan.image_size " + std::to_string(c.image_size) + " too small for " +
            std::to_string(c.discriminator_layers) + " discriminator layers");
}

std::vector<int> effective_schedule(const GanConfig& c) {
  std::set<int> unique(c.checkpoint_schedule.begin(), c.checkpoint_schedule.end());
  std::vector<int> out;
  for (int e : unique) {
    if (e <= c.epochs) out.push_back(e);
  }
  if (out.size() < unique.size()) {
    log::warn("checkpoint schedule truncated to {} entries: training stops at epoch {}", out.size(), c.epochs);
  }
  return out;
}

json to_json(const GanConfig& c) {
  return {{"image_size", c.image_size},
          {"ngf", c.ngf},
          {"ndf", c.ndf},
          {"generator_blocks", c.generator_blocks},
          {"downsamplings", c.downsamplings},
          {"stem_kernel", c.stem_kernel},
          {"discriminator_layers", c.discriminator_layers},
          {"adversarial", form_name(c.adversarial)},
          {"lambda_cyc", c.lambda_cyc},
          {"lambda_id", c.lambda_id},
          {"learning_rate", c.learning_rate},
          {"beta1", c.beta1},
          {"epochs", c.epochs},
          {"checkpoint_schedule", c.checkpoint_schedule},
          {"pool_size", c.pool_size},
          {"batch_size", c.batch_size},
          {"flips", c.flips},
          {"seed", c.seed}};
}

GanConfig gan_config_from_json(const json& j, const GanConfig& base) {
  GanConfig c = base;
  try {
    c.image_size = j.value("image_size", c.image_size);
    c.ngf = j.value("ngf", c.ngf);
    c.ndf = j.value("ndf", c.ndf);
    c.generator_blocks = j.value("generator_blocks", c.generator_blocks);
    c.downsamplings = j.value("downsamplings", c.downsamplings);
    c.stem_kernel = j.value("stem_kernel", c.stem_kernel);
    c.discriminator_layers = j.value("discriminator_layers", c.discriminator_layers);
    if (j.contains("adversarial")) c.adversarial = parse_form(j.at("adversarial").get<std::string>());
    c.lambda_cyc = j.value("lambda_cyc", c.lambda_cyc);
    c.lambda_id = j.value("lambda_id", c.lambda_id);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.beta1 = j.value("beta1", c.beta1);
    c.epochs = j.value("epochs", c.epochs);
    c.checkpoint_schedule = j.value("checkpoint_schedule", c.checkpoint_schedule);
    c.pool_size = j.value("pool_size", c.pool_size);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.flips = j.value("flips", c.flips);
    c.seed = j.value("seed", c.seed);
  } catch (const json::exception& e) {
    fail(ErrorKind::invalid_argument, std::string("gan config: ") + e.what());
  }
  return c;
}

// ---------------------------------------------------------------------------
// Networks

namespace {

std::shared_ptr<nn::Conv2d> make_conv(int in, int out, int k, int stride, int pad, nn::PadMode mode, Rng& rng,
                                      bool bias = true) {
  return std::make_shared<nn::Conv2d>(nn::Conv2d::Options{in, out, k, stride, pad, mode, bias}, rng,
                                      nn::Init::normal_002);
}

}  // namespace

struct ResnetGenerator::Block : nn::Module {
  std::shared_ptr<nn::Conv2d> conv1, conv2;
  std::shared_ptr<nn::InstanceNorm2d> norm1, norm2;

  Block(int channels, Rng& rng) {
    conv1 = register_module("conv1", make_conv(channels, channels, 3, 1, 1, nn::PadMode::reflect, rng, false));
    norm1 = register_module("norm1", std::make_shared<nn::InstanceNorm2d>(channels, false));
    conv2 = register_module("conv2", make_conv(channels, channels, 3, 1, 1, nn::PadMode::reflect, rng, false));
    norm2 = register_module("norm2", std::make_shared<nn::InstanceNorm2d>(channels, false));
  }

  Var forward(const Var& x) const {
    Var h = nn::relu(norm1->forward(conv1->forward(x)));
    return nn::add(x, norm2->forward(conv2->forward(h)));
  }
};

ResnetGenerator::ResnetGenerator(const Options& o, Rng& rng) : opts_(o) {
  const int pad = o.stem_kernel / 2;
  encoder_.push_back(register_module(
      "encoder.0", make_conv(o.channels, o.ngf, o.stem_kernel, 1, pad, nn::PadMode::reflect, rng, false)));
  encoder_norms_.push_back(register_module("encoder_norm.0", std::make_shared<nn::InstanceNorm2d>(o.ngf, false)));
  int ch = o.ngf;
  for (int i = 0; i < o.downsamplings; ++i) {
    const auto idx = std::to_string(i + 1);
    encoder_.push_back(register_module("encoder." + idx, make_conv(ch, ch * 2, 3, 2, 1, nn::PadMode::zeros, rng, false)));
    encoder_norms_.push_back(
        register_module("encoder_norm." + idx, std::make_shared<nn::InstanceNorm2d>(ch * 2, false)));
    ch *= 2;
  }
  for (int b = 0; b < o.blocks; ++b) {
    blocks_.push_back(register_module("blocks." + std::to_string(b), std::make_shared<Block>(ch, rng)));
  }
  for (int i = 0; i < o.downsamplings; ++i) {
    const auto idx = std::to_string(i);
    decoder_.push_back(register_module("decoder." + idx, make_conv(ch, ch / 2, 3, 1, 1, nn::PadMode::reflect, rng, false)));
    decoder_norms_.push_back(
        register_module("decoder_norm." + idx, std::make_shared<nn::InstanceNorm2d>(ch / 2, false)));
    ch /= 2;
  }
  head_ = register_module("head", make_conv(ch, o.channels, o.stem_kernel, 1, pad, nn::PadMode::reflect, rng));
}

Var ResnetGenerator::forward(const Var& x) const {
  Var h = x;
  for (std::size_t i = 0; i < encoder_.size(); ++i) {
    h = nn::relu(encoder_norms_[i]->forward(encoder_[i]->forward(h)));
  }
  for (const auto& b : blocks_) h = b->forward(h);
  for (std::size_t i = 0; i < decoder_.size(); ++i) {
    h = nn::relu(decoder_norms_[i]->forward(decoder_[i]->forward(nn::upsample_nearest(h, 2))));
  }
  return nn::tanh(head_->forward(h));
}

PatchDiscriminator::PatchDiscriminator(int channels, int ndf, int layers, Rng& rng) {
  int ch = ndf;
  convs_.push_back(register_module("conv.0", make_conv(channels, ndf, 4, 2, 1, nn::PadMode::zeros, rng)));
  norms_.push_back(nullptr);
  for (int i = 1; i <= layers; ++i) {
    const int next = ndf * std::min(1 << i, 8);
    const int stride = i < layers ? 2 : 1;
    const auto idx = std::to_string(i);
    convs_.push_back(register_module("conv." + idx, make_conv(ch, next, 4, stride, 1, nn::PadMode::zeros, rng, false)));
    norms_.push_back(register_module("norm." + idx, std::make_shared<nn::InstanceNorm2d>(next, false)));
    ch = next;
  }
  convs_.push_back(register_module("conv." + std::to_string(layers + 1),
                                   make_conv(ch, 1, 4, 1, 1, nn::PadMode::zeros, rng)));
  norms_.push_back(nullptr);
}

Var PatchDiscriminator::forward(const Var& x) const {
  Var h = x;
  for (std::size_t i = 0; i + 1 < convs_.size(); ++i) {
    h = convs_[i]->forward(h);
    if (norms_[i]) h = norms_[i]->forward(h);
    h = nn::leaky_relu(h, 0.2);
  }
  return convs_.back()->forward(h);
}

// ---------------------------------------------------------------------------
// Replay buffer

ImagePool::ImagePool(int capacity, std::uint64_t seed) : capacity_(capacity), rng_(seed) {
  require(capacity >= 0, ErrorKind::invalid_argument, "image pool capacity must be >= 0");
}

Tensor ImagePool::query_one(const Tensor& image, bool* from_pool) {
  if (from_pool) *from_pool = false;
  if (capacity_ == 0) return image;
  if (static_cast<int>(images_.size()) < capacity_) {
    images_.push_back(image);
    return image;
  }
  if (rng_.bernoulli(0.5)) {
    const auto idx = static_cast<std::size_t>(rng_.uniform_int(0, capacity_ - 1));
    Tensor old = std::move(images_[idx]);
    images_[idx] = image;
    if (from_pool) *from_pool = true;
    return old;
  }
  return image;
}

Tensor ImagePool::query(const Tensor& batch) {
  std::vector<Tensor> parts;
  parts.reserve(static_cast<std::size_t>(batch.dim(0)));
  for (std::int64_t i = 0; i < batch.dim(0); ++i) parts.push_back(query_one(batch.slice_batch(i, i + 1)));
  return nn::concat_batch(parts);
}

// ---------------------------------------------------------------------------
// Losses

Var cycle_consistency_loss(const Var& x, const Mapping& G, const Mapping& F) {
  Var rec = F(G(x));
  require(rec.shape() == x.shape(), ErrorKind::size_mismatch,
          "cycle reconstruction " + nn::shape_string(rec.shape()) + " does not match input " +
              nn::shape_string(x.shape()));
  return nn::l1_loss(rec, x);
}

Var adversarial_loss(const Var& d, Target target, AdversarialForm form) {
  for (double v : d.value().values()) {
    require(std::isfinite(v), ErrorKind::non_finite, "non-finite discriminator output");
  }
  const double label = target == Target::real ? 1.0 : 0.0;
  return form == AdversarialForm::least_squares ? nn::mse_to(d, label) : nn::bce_with_logits(d, label);
}

GeneratorLoss generator_loss(const Var& x, const Var& y, const ResnetGenerator& G, const ResnetGenerator& F,
                             const PatchDiscriminator& D_X, const PatchDiscriminator& D_Y, const GanConfig& c) {
  GeneratorLoss out;
  out.fake_y = G.forward(x);
  out.fake_x = F.forward(y);
  out.adversarial_G = adversarial_loss(D_Y.forward(out.fake_y), Target::real, c.adversarial);
  out.adversarial_F = adversarial_loss(D_X.forward(out.fake_x), Target::real, c.adversarial);
  out.cycle = nn::add(nn::l1_loss(F.forward(out.fake_y), x), nn::l1_loss(G.forward(out.fake_x), y));
  if (c.lambda_id > 0.0) {
    out.identity = nn::add(nn::l1_loss(G.forward(y), y), nn::l1_loss(F.forward(x), x));
  } else {
    out.identity = Var(Tensor({1}, 0.0));
  }
  const std::vector<Var> terms{out.adversarial_G, out.adversarial_F, out.cycle, out.identity};
  const std::vector<double> weights{1.0, 1.0, c.lambda_cyc, c.lambda_id};
  out.total = nn::weighted_sum(terms, weights);
  return out;
}

// ---------------------------------------------------------------------------
// Bundle and checkpoints

namespace {

std::vector<nn::NamedVar> prefixed(const nn::Module& m, const std::string& prefix) {
  auto params = m.named_parameters();
  for (auto& p : params) p.name = prefix + p.name;
  return params;
}

template <class A, class B>
std::vector<nn::NamedVar> joined(const A& a, const std::string& pa, const B& b, const std::string& pb) {
  auto out = prefixed(a, pa);
  auto rest = prefixed(b, pb);
  out.insert(out.end(), rest.begin(), rest.end());
  return out;
}

}  // namespace

GanBundle build_cyclegan(const GanConfig& config) {
  validate(config);
  GanBundle b;
  b.config = config;
  Rng rng(mix_seed(config.seed, 0xC7C1E));
  ResnetGenerator::Options go{3, config.ngf, config.resolved_generator_blocks(), config.downsamplings,
                              config.stem_kernel};
  b.G = std::make_shared<ResnetGenerator>(go, rng);
  b.F = std::make_shared<ResnetGenerator>(go, rng);
  b.D_X = std::make_shared<PatchDiscriminator>(3, config.ndf, config.discriminator_layers, rng);
  b.D_Y = std::make_shared<PatchDiscriminator>(3, config.ndf, config.discriminator_layers, rng);
  b.opt_G = std::make_unique<nn::Adam>(joined(*b.G, "G.", *b.F, "F."), config.learning_rate, config.beta1, 0.999);
  b.opt_D =
      std::make_unique<nn::Adam>(joined(*b.D_X, "D_X.", *b.D_Y, "D_Y."), config.learning_rate, config.beta1, 0.999);
  for (auto* m : std::initializer_list<nn::Module*>{b.G.get(), b.F.get(), b.D_X.get(), b.D_Y.get()}) m->eval();
  return b;
}

nn::Archive GanBundle::to_archive() const {
  nn::Archive a;
  a.meta = {{"kind", "cyclegan"}, {"epoch", epoch}, {"config", gan::to_json(config)}};
  nn::store_module(a, *G, "G.");
  nn::store_module(a, *F, "F.");
  nn::store_module(a, *D_X, "D_X.");
  nn::store_module(a, *D_Y, "D_Y.");
  nn::store_optimizer(a, *opt_G, "opt_G.");
  nn::store_optimizer(a, *opt_D, "opt_D.");
  return a;
}

GanBundle GanBundle::from_archive(const nn::Archive& a) {
  require(a.meta.value("kind", "") == "cyclegan", ErrorKind::format, "archive is not a CycleGAN checkpoint");
  GanBundle b = build_cyclegan(gan_config_from_json(a.meta.at("config")));
  nn::load_module(a, *b.G, "G.");
  nn::load_module(a, *b.F, "F.");
  nn::load_module(a, *b.D_X, "D_X.");
  nn::load_module(a, *b.D_Y, "D_Y.");
  nn::load_optimizer(a, *b.opt_G, "opt_G.");
  nn::load_optimizer(a, *b.opt_D, "opt_D.");
  b.epoch = a.meta.at("epoch").get<int>();
  return b;
}

Checkpoint Checkpoint::from_archive(const nn::Archive& archive, std::string kind, int epoch) {
  Checkpoint c;
  c.kind = std::move(kind);
  c.epoch = epoch;
  c.bytes = archive.to_bytes();
  c.id = sha256_hex(c.bytes);
  return c;
}

nn::Archive Checkpoint::archive() const {
  require(!bytes.empty(), ErrorKind::missing_file, "checkpoint has no content");
  return nn::Archive::from_bytes(bytes);
}

void Checkpoint::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  require(static_cast<bool>(out), ErrorKind::io, "cannot write checkpoint " + path.string());
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::missing_file, "checkpoint not found: " + path.string());
  Checkpoint c;
  c.bytes.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  const auto a = nn::Archive::from_bytes(c.bytes);
  c.kind = a.meta.value("kind", "");
  c.epoch = a.meta.value("epoch", 0);
  c.id = sha256_hex(c.bytes);
  return c;
}

namespace {

std::string fmt_row(std::initializer_list<double> values) {
  std::ostringstream os;
  os.precision(10);
  bool first = true;
  for (double v : values) {
    if (!first) os << ',';
    os << v;
    first = false;
  }
  return os.str();
}

}  // namespace

std::string cycle_loss_csv(std::span<const CycleEpochLoss> log) {
  std::string out = "epoch,loss_G,loss_F,loss_D_X,loss_D_Y,loss_cyc,loss_id\n";
  for (const auto& r : log) {
    out += std::to_string(r.epoch) + "," +
           fmt_row({r.loss_G, r.loss_F, r.loss_D_X, r.loss_D_Y, r.loss_cyc, r.loss_id}) + "\n";
  }
  return out;
}

std::string dcgan_loss_csv(std::span<const DcganEpochLoss> log) {
  std::string out = "epoch,loss_G,loss_D\n";
  for (const auto& r : log) out += std::to_string(r.epoch) + "," + fmt_row({r.loss_G, r.loss_D}) + "\n";
  return out;
}

// ---------------------------------------------------------------------------
// Training

namespace {

struct TileBank {
  std::int64_t size = 0;
  std::vector<std::vector<double>> chw;

  TileBank(std::span<const data::ImageTile> tiles, const char* domain) {
    require(!tiles.empty(), ErrorKind::empty_input, std::string("domain ") + domain + " is empty");
    size = tiles.front().width();
    for (const auto& t : tiles) {
      require(t.width() == size && t.height() == size, ErrorKind::size_mismatch,
              std::string("domain ") + domain + " tile '" + t.id + "' is " + std::to_string(t.width()) + "x" +
                  std::to_string(t.height()) + ", expected " + std::to_string(size) + "x" + std::to_string(size));
      std::vector<double> v(static_cast<std::size_t>(3 * size * size));
      image_to_chw(t.pixels, v);
      chw.push_back(std::move(v));
    }
  }

  // Batch of the given tile indices, each flipped horizontally with
  // probability 1/2 when `flips` is set.
  Tensor batch(std::span<const std::size_t> idx, bool flips, Rng& rng) const {
    const std::int64_t plane = size * size;
    Tensor out({static_cast<std::int64_t>(idx.size()), 3, size, size});
    for (std::size_t b = 0; b < idx.size(); ++b) {
      const auto& src = chw[idx[b]];
      double* dst = out.data() + static_cast<std::int64_t>(b) * 3 * plane;
      const bool flip = flips && rng.bernoulli(0.5);
      for (std::int64_t c = 0; c < 3; ++c)
        for (std::int64_t y = 0; y < size; ++y)
          for (std::int64_t x = 0; x < size; ++x) {
            const std::int64_t sx = flip ? size - 1 - x : x;
            dst[(c * size + y) * size + x] = src[static_cast<std::size_t>((c * size + y) * size + sx)];
          }
    }
    return out;
  }
};

// Endless reshuffled pass over [0, n).
class Cycler {
 public:
  Cycler(std::size_t n, Rng& rng) : order_(n), rng_(rng) {
    std::iota(order_.begin(), order_.end(), 0);
    reshuffle();
  }
  void reshuffle() {
    rng_.shuffle(std::span(order_));
    pos_ = 0;
  }
  std::vector<std::size_t> take(std::size_t k) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < k; ++i) {
      if (pos_ == order_.size()) reshuffle();
      out.push_back(order_[pos_++]);
    }
    return out;
  }

 private:
  std::vector<std::size_t> order_;
  Rng& rng_;
  std::size_t pos_ = 0;
};

double lr_factor(int epoch, int epochs) {
  const int constant = epochs - epochs / 2;
  const int decay = epochs - constant;
  return 1.0 - static_cast<double>(std::max(0, epoch - constant)) / static_cast<double>(decay + 1);
}

}  // namespace

CycleGanResult train_cyclegan(GanBundle& b, std::span<const data::ImageTile> X, std::span<const data::ImageTile> Y,
                              const CheckpointSink& sink) {
  const GanConfig& c = b.config;
  const TileBank bx(X, "X"), by(Y, "Y");
  require(bx.size == c.image_size && by.size == c.image_size, ErrorKind::size_mismatch,
          "tiles are " + std::to_string(bx.size) + "/" + std::to_string(by.size) + " px, config expects " +
              std::to_string(c.image_size));
  const auto schedule = effective_schedule(c);
  Rng rng(mix_seed(c.seed, 0x7EA1 + static_cast<std::uint64_t>(b.epoch)));
  Cycler cx(X.size(), rng), cy(Y.size(), rng);
  ImagePool pool_x(c.pool_size, mix_seed(c.seed, 0x9001)), pool_y(c.pool_size, mix_seed(c.seed, 0x9002));
  const auto bs = static_cast<std::size_t>(c.batch_size);
  const std::size_t iterations = (std::max(X.size(), Y.size()) + bs - 1) / bs;

  CycleGanResult result;
  std::optional<Checkpoint> last_good;
  for (auto* m : std::initializer_list<nn::Module*>{b.G.get(), b.F.get(), b.D_X.get(), b.D_Y.get()}) m->train();

  while (b.epoch < c.epochs) {
    const int epoch = b.epoch + 1;
    const double lr = c.learning_rate * lr_factor(epoch, c.epochs);
    b.opt_G->set_learning_rate(lr);
    b.opt_D->set_learning_rate(lr);
    CycleEpochLoss sums;
    sums.epoch = epoch;
    for (std::size_t it = 0; it < iterations; ++it) {
      const auto ix = cx.take(bs);
      const auto iy = cy.take(bs);
      Var x(bx.batch(ix, c.flips, rng));
      Var y(by.batch(iy, c.flips, rng));

      const auto diverged = [&](const std::string& what) {
        for (auto* m : std::initializer_list<nn::Module*>{b.G.get(), b.F.get(), b.D_X.get(), b.D_Y.get()})
          m->eval();
        throw TrainingDiverged(what + " at epoch " + std::to_string(epoch) + ", iteration " +
                                   std::to_string(it) +
                                   (last_good ? "; last good checkpoint is epoch " + std::to_string(last_good->epoch)
                                              : "; no checkpoint taken yet"),
                               epoch, last_good);
      };
      GeneratorLoss g;
      try {
        g = generator_loss(x, y, *b.G, *b.F, *b.D_X, *b.D_Y, c);
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::non_finite) throw;
        diverged(e.what());
      }
      if (!std::isfinite(g.total.item())) diverged("non-finite generator loss");
      b.opt_G->zero_grad();
      g.total.backward();
      b.opt_G->step();

      Var fake_x(pool_x.query(g.fake_x.value()));
      Var fake_y(pool_y.query(g.fake_y.value()));
      Var d_x, d_y;
      try {
        d_x = nn::scale(nn::add(adversarial_loss(b.D_X->forward(x), Target::real, c.adversarial),
                                adversarial_loss(b.D_X->forward(fake_x), Target::fake, c.adversarial)),
                        0.5);
        d_y = nn::scale(nn::add(adversarial_loss(b.D_Y->forward(y), Target::real, c.adversarial),
                                adversarial_loss(b.D_Y->forward(fake_y), Target::fake, c.adversarial)),
                        0.5);
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::non_finite) throw;
        diverged(e.what());
      }
      Var d_total = nn::add(d_x, d_y);
      if (!std::isfinite(d_total.item())) diverged("non-finite discriminator loss");
      b.opt_D->zero_grad();
      d_total.backward();
      b.opt_D->step();

      sums.loss_G += g.adversarial_G.item();
      sums.loss_F += g.adversarial_F.item();
      sums.loss_cyc += g.cycle.item();
      sums.loss_id += g.identity.item();
      sums.loss_D_X += d_x.item();
      sums.loss_D_Y += d_y.item();
    }
    const auto n = static_cast<double>(iterations);
    sums.loss_G /= n;
    sums.loss_F /= n;
    sums.loss_cyc /= n;
    sums.loss_id /= n;
    sums.loss_D_X /= n;
    sums.loss_D_Y /= n;
    result.log.push_back(sums);
    b.epoch = epoch;
    log::debug("cyclegan epoch {}: G {:.4f} F {:.4f} D_X {:.4f} D_Y {:.4f} cyc {:.4f} id {:.4f}", epoch,
               sums.loss_G, sums.loss_F, sums.loss_D_X, sums.loss_D_Y, sums.loss_cyc, sums.loss_id);

    if (std::binary_search(schedule.begin(), schedule.end(), epoch)) {
      for (auto* m : std::initializer_list<nn::Module*>{b.G.get(), b.F.get(), b.D_X.get(), b.D_Y.get()}) m->eval();
      auto ck = Checkpoint::from_archive(b.to_archive(), "cyclegan", epoch);
      for (auto* m : std::initializer_list<nn::Module*>{b.G.get(), b.F.get(), b.D_X.get(), b.D_Y.get()}) m->train();
      if (sink) sink(ck);
      last_good = ck;
      result.checkpoints.push_back(std::move(ck));
    }
  }
  for (auto* m : std::initializer_list<nn::Module*>{b.G.get(), b.F.get(), b.D_X.get(), b.D_Y.get()}) m->eval();
  result.final = result.checkpoints.empty() || result.checkpoints.back().epoch != b.epoch
                     ? Checkpoint::from_archive(b.to_archive(), "cyclegan", b.epoch)
                     : result.checkpoints.back();
  return result;
}

CycleGanResult train_cyclegan(std::span<const data::ImageTile> X, std::span<const data::ImageTile> Y,
                              const GanConfig& config, const CheckpointSink& sink) {
  GanBundle b = build_cyclegan(config);
  return train_cyclegan(b, X, Y, sink);
}

// ---------------------------------------------------------------------------
// Translation

namespace {

std::string synthetic_id(std::string_view label, std::string_view ref, std::string_view tag,
                         const std::string& suffix) {
  std::string s(suffix);
  std::replace(s.begin(), s.end(), '/', '_');
  return std::string(label) + "/" + std::string(tag) + "_" + std::string(ref.substr(0, 12)) + "_" + s;
}

constexpr std::size_t kInferenceBatch = 16;

}  // namespace

std::vector<data::ImageTile> translate(const ResnetGenerator& generator, std::string_view generator_ref,
                                       std::span<const data::ImageTile> tiles, std::string_view target_label) {
  require(!generator_ref.empty(), ErrorKind::invalid_argument, "translate needs a generator reference");
  std::vector<data::ImageTile> out;
  if (tiles.empty()) return out;
  const int factor = 1 << generator.options().downsamplings;
  const int size = tiles.front().width();
  for (const auto& t : tiles) {
    require(t.width() == size && t.height() == size && size % factor == 0, ErrorKind::size_mismatch,
            "tile '" + t.id + "' (" + std::to_string(t.width()) + "x" + std::to_string(t.height()) +
                ") cannot be translated in a batch of " + std::to_string(size) + " px tiles");
  }
  nn::NoGradGuard no_grad;
  out.reserve(tiles.size());
  for (std::size_t b = 0; b < tiles.size(); b += kInferenceBatch) {
    const std::size_t e = std::min(tiles.size(), b + kInferenceBatch);
    std::vector<Image> images;
    for (std::size_t i = b; i < e; ++i) images.push_back(tiles[i].pixels);
    const Tensor y = generator.forward(Var(images_to_tensor(images))).value();
    for (std::size_t i = b; i < e; ++i) {
      data::ImageTile t;
      t.id = synthetic_id(target_label, generator_ref, "syn", tiles[i].id);
      t.pixels = tensor_to_image(y, static_cast<std::int64_t>(i - b));
      t.label = std::string(target_label);
      t.provenance = data::Provenance::synthetic;
      t.source_ref = tiles[i].id;
      t.generator_ref = std::string(generator_ref);
      out.push_back(std::move(t));
    }
  }
  return out;
}

std::vector<data::ImageTile> translate(const Checkpoint& checkpoint, Direction direction,
                                       std::span<const data::ImageTile> tiles, std::string_view target_label) {
  require(checkpoint.kind == "cyclegan", ErrorKind::format, "translate needs a CycleGAN checkpoint");
  const GanBundle b = GanBundle::from_archive(checkpoint.archive());
  for (const auto& t : tiles) {
    require(t.width() == b.config.image_size && t.height() == b.config.image_size, ErrorKind::size_mismatch,
            "tile '" + t.id + "' is " + std::to_string(t.width()) + "x" + std::to_string(t.height()) +
                ", generator was trained on " + std::to_string(b.config.image_size) + " px tiles");
  }
  return translate(direction == Direction::x_to_y ? *b.G : *b.F, checkpoint.id, tiles, target_label);
}

// ---------------------------------------------------------------------------
// DCGAN

namespace {

// Number of halvings from image_size down to the seed grid (4..7 px when the
// size allows), and the seed grid edge.
std::pair<int, int> dcgan_geometry(int image_size) {
  int m = 0, s = image_size;
  while (s % 2 == 0 && s / 2 >= 4) {
    s /= 2;
    ++m;
  }
  return {m, s};
}

}  // namespace

void validate(const DcganConfig& c) {
  check(c.latent >= 1, "dcgan.latent must be >= 1");
  check(c.ngf >= 1 && c.ndf >= 1, "dcgan.ngf and dcgan.ndf must be >= 1");
  check(c.learning_rate > 0.0, "dcgan.learning_rate must be > 0");
  check(c.beta1 >= 0.0 && c.beta1 < 1.0, "dcgan.beta1 must lie in [0, 1)");
  check(c.epochs >= 1, "dcgan.epochs must be >= 1");
  check(c.batch_size >= 2, "dcgan.batch_size must be >= 2");
  for (int e : c.checkpoint_schedule) check(e >= 1, "dcgan.checkpoint_schedule entries must be >= 1");
  check(c.image_size >= 8 && dcgan_geometry(c.image_size).first >= 1,
        "dcgan.image_size " + std::to_string(c.image_size) + " must be even and >= 8");
}

json to_json(const DcganConfig& c) {
  return {{"image_size", c.image_size}, {"latent", c.latent},       {"ngf", c.ngf},
          {"ndf", c.ndf},               {"learning_rate", c.learning_rate}, {"beta1", c.beta1},
          {"epochs", c.epochs},         {"batch_size", c.batch_size}, {"checkpoint_schedule", c.checkpoint_schedule},
          {"seed", c.seed}};
}

DcganConfig dcgan_config_from_json(const json& j, const DcganConfig& base) {
  DcganConfig c = base;
  try {
    c.image_size = j.value("image_size", c.image_size);
    c.latent = j.value("latent", c.latent);
    c.ngf = j.value("ngf", c.ngf);
    c.ndf = j.value("ndf", c.ndf);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.beta1 = j.value("beta1", c.beta1);
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.checkpoint_schedule = j.value("checkpoint_schedule", c.checkpoint_schedule);
    c.seed = j.value("seed", c.seed);
  } catch (const json::exception& e) {
    fail(ErrorKind::invalid_argument, std::string("dcgan config: ") + e.what());
  }
  return c;
}

DcganGenerator::DcganGenerator(const DcganConfig& c, Rng& rng) : latent_(c.latent) {
  const auto [m, base] = dcgan_geometry(c.image_size);
  base_ = base;
  base_channels_ = c.ngf * std::min(1 << (m - 1), 8);
  project_ = register_module("project", std::make_shared<nn::Linear>(c.latent, base_channels_ * base * base, rng,
                                                                     nn::Init::normal_002));
  project_norm_ = register_module("project_norm", std::make_shared<nn::BatchNorm2d>(base_channels_));
  int ch = base_channels_;
  for (int i = 0; i < m; ++i) {
    const int next = std::max(c.ngf, ch / 2);
    const auto idx = std::to_string(i);
    convs_.push_back(register_module("up." + idx, make_conv(ch, next, 3, 1, 1, nn::PadMode::zeros, rng, false)));
    norms_.push_back(register_module("up_norm." + idx, std::make_shared<nn::BatchNorm2d>(next)));
    ch = next;
  }
  head_ = register_module("head", make_conv(ch, 3, 3, 1, 1, nn::PadMode::zeros, rng));
}

Var DcganGenerator::forward(const Var& z) const {
  require(z.value().rank() == 2 && z.value().dim(1) == latent_, ErrorKind::size_mismatch,
          "dcgan noise must be [N, " + std::to_string(latent_) + "]");
  const bool freeze = !is_training();
  Var h = nn::reshape(project_->forward(z), {z.value().dim(0), base_channels_, base_, base_});
  h = nn::relu(project_norm_->forward(h, freeze));
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    h = nn::relu(norms_[i]->forward(convs_[i]->forward(nn::upsample_nearest(h, 2)), freeze));
  }
  return nn::tanh(head_->forward(h));
}

DcganDiscriminator::DcganDiscriminator(const DcganConfig& c, Rng& rng) {
  const auto [m, base] = dcgan_geometry(c.image_size);
  int ch = c.ndf;
  convs_.push_back(register_module("conv.0", make_conv(3, ch, 4, 2, 1, nn::PadMode::zeros, rng)));
  norms_.push_back(nullptr);
  for (int i = 1; i < m; ++i) {
    const int next = std::min(ch * 2, c.ndf * 8);
    const auto idx = std::to_string(i);
    convs_.push_back(register_module("conv." + idx, make_conv(ch, next, 4, 2, 1, nn::PadMode::zeros, rng, false)));
    norms_.push_back(register_module("norm." + idx, std::make_shared<nn::BatchNorm2d>(next)));
    ch = next;
  }
  head_ = register_module("head", std::make_shared<nn::Linear>(ch * base * base, 1, rng, nn::Init::normal_002));
}

Var DcganDiscriminator::forward(const Var& x) const {
  Var h = x;
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    h = convs_[i]->forward(h);
    if (norms_[i]) h = norms_[i]->forward(h);
    h = nn::leaky_relu(h, 0.2);
  }
  const auto n = h.value().dim(0);
  return head_->forward(nn::reshape(h, {n, h.value().numel() / n}));
}

namespace {

struct DcganBundle {
  DcganConfig config;
  std::shared_ptr<DcganGenerator> G;
  std::shared_ptr<DcganDiscriminator> D;
  std::unique_ptr<nn::Adam> opt_G, opt_D;
  int epoch = 0;

  explicit DcganBundle(const DcganConfig& c) : config(c) {
    validate(c);
    Rng rng(mix_seed(c.seed, 0xDC6A));
    G = std::make_shared<DcganGenerator>(c, rng);
    D = std::make_shared<DcganDiscriminator>(c, rng);
    opt_G = std::make_unique<nn::Adam>(G->named_parameters(), c.learning_rate, c.beta1, 0.999);
    opt_D = std::make_unique<nn::Adam>(D->named_parameters(), c.learning_rate, c.beta1, 0.999);
  }

  nn::Archive to_archive() const {
    nn::Archive a;
    a.meta = {{"kind", "dcgan"}, {"epoch", epoch}, {"config", to_json(config)}};
    nn::store_module(a, *G, "G.");
    nn::store_module(a, *D, "D.");
    nn::store_optimizer(a, *opt_G, "opt_G.");
    nn::store_optimizer(a, *opt_D, "opt_D.");
    return a;
  }

  static DcganBundle from_archive(const nn::Archive& a) {
    require(a.meta.value("kind", "") == "dcgan", ErrorKind::format, "archive is not a DCGAN checkpoint");
    DcganBundle b(dcgan_config_from_json(a.meta.at("config")));
    nn::load_module(a, *b.G, "G.");
    nn::load_module(a, *b.D, "D.");
    nn::load_optimizer(a, *b.opt_G, "opt_G.");
    nn::load_optimizer(a, *b.opt_D, "opt_D.");
    b.epoch = a.meta.at("epoch").get<int>();
    return b;
  }
};

Tensor noise(std::int64_t n, int latent, Rng& rng) {
  Tensor z({n, latent});
  for (auto& v : z.values()) v = rng.normal();
  return z;
}

}  // namespace

DcganResult train_dcgan(std::span<const data::ImageTile> Y, const DcganConfig& config, const CheckpointSink& sink) {
  DcganBundle b(config);
  const TileBank by(Y, "Y");
  require(by.size == config.image_size, ErrorKind::size_mismatch,
          "tiles are " + std::to_string(by.size) + " px, config expects " + std::to_string(config.image_size));
  std::set<int> schedule(config.checkpoint_schedule.begin(), config.checkpoint_schedule.end());
  Rng rng(mix_seed(config.seed, 0xDC7A));
  Cycler cy(Y.size(), rng);
  const auto bs = std::min(static_cast<std::size_t>(config.batch_size), std::max<std::size_t>(Y.size(), 2));
  const std::size_t iterations = std::max<std::size_t>(1, Y.size() / bs);

  DcganResult result;
  std::optional<Checkpoint> last_good;
  b.G->train();
  b.D->train();
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    DcganEpochLoss sums;
    sums.epoch = epoch;
    for (std::size_t it = 0; it < iterations; ++it) {
      Var real(by.batch(cy.take(bs), true, rng));
      Var fake = b.G->forward(Var(noise(static_cast<std::int64_t>(bs), config.latent, rng)));
      Var d_loss = nn::add(nn::bce_with_logits(b.D->forward(real), 1.0),
                           nn::bce_with_logits(b.D->forward(Var(fake.value())), 0.0));
      Var g_loss = nn::bce_with_logits(b.D->forward(fake), 1.0);
      if (!std::isfinite(d_loss.item()) || !std::isfinite(g_loss.item())) {
        b.G->eval();
        b.D->eval();
        throw TrainingDiverged("non-finite DCGAN loss at epoch " + std::to_string(epoch), epoch, last_good);
      }
      b.opt_D->zero_grad();
      d_loss.backward();
      b.opt_D->step();
      b.opt_G->zero_grad();
      g_loss.backward();
      b.opt_G->step();
      sums.loss_D += d_loss.item();
      sums.loss_G += g_loss.item();
    }
    sums.loss_D /= static_cast<double>(iterations);
    sums.loss_G /= static_cast<double>(iterations);
    result.log.push_back(sums);
    b.epoch = epoch;
    log::debug("dcgan epoch {}: G {:.4f} D {:.4f}", epoch, sums.loss_G, sums.loss_D);
    if (schedule.contains(epoch)) {
      auto ck = Checkpoint::from_archive(b.to_archive(), "dcgan", epoch);
      if (sink) sink(ck);
      last_good = ck;
      result.checkpoints.push_back(std::move(ck));
    }
  }
  b.G->eval();
  b.D->eval();
  result.final = Checkpoint::from_archive(b.to_archive(), "dcgan", b.epoch);
  return result;
}

std::vector<data::ImageTile> sample_dcgan(const Checkpoint& checkpoint, int n, std::uint64_t seed,
                                          std::string_view label) {
  require(n >= 1, ErrorKind::invalid_argument, "sample count must be >= 1");
  require(checkpoint.kind == "dcgan", ErrorKind::format, "sample_dcgan needs a DCGAN checkpoint");
  const DcganBundle b = DcganBundle::from_archive(checkpoint.archive());
  b.G->eval();
  Rng rng(seed);
  const Tensor z = noise(n, b.config.latent, rng);
  const auto chunk = static_cast<std::int64_t>(b.config.batch_size);
  nn::NoGradGuard no_grad;
  std::vector<data::ImageTile> out;
  for (std::int64_t s = 0; s < n; s += chunk) {
    const std::int64_t e = std::min<std::int64_t>(n, s + chunk);
    const Tensor y = b.G->forward(Var(z.slice_batch(s, e))).value();
    for (std::int64_t i = s; i < e; ++i) {
      data::ImageTile t;
      char buf[32];
      std::snprintf(buf, sizeof buf, "%llu_%05lld.png", static_cast<unsigned long long>(seed),
                    static_cast<long long>(i));
      t.id = synthetic_id(label, checkpoint.id, "dcgan", buf);
      t.pixels = tensor_to_image(y, i - s);
      t.label = std::string(label);
      t.provenance = data::Provenance::synthetic;
      t.generator_ref = checkpoint.id;
      out.push_back(std::move(t));
    }
  }
  return out;
}

}  // namespace polypforge::gan
