#include "nobias/cli.hpp"

#include <charconv>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <stdexcept>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "nobias/attribution.hpp"
#include "nobias/audit.hpp"
#include "nobias/concept.hpp"
#include "nobias/dataset.hpp"
#include "nobias/errors.hpp"
#include "nobias/manifest.hpp"
#include "nobias/network.hpp"
#include "nobias/render.hpp"
#include "nobias/studies.hpp"
#include "nobias/synthetic.hpp"
#include "nobias/tensor_io.hpp"
#include "nobias/trainer.hpp"

namespace nobias::cli {
namespace {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class InvalidRun : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void write_json(const fs::path& path, const json& j) {
  std::ofstream os(path, std::ios::binary);
  os << j.dump(2) << '\n';
  if (!os) throw std::runtime_error("failed writing " + path.string());
}

std::vector<Method> parse_methods(const std::string& list) {
  std::vector<Method> methods;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      methods.push_back(parse_method(item));
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
  }
  if (methods.empty()) throw UsageError("--methods needs at least one method");
  return methods;
}

ChannelReduction parse_reduction(const std::string& s) {
  if (s == "none") return ChannelReduction::None;
  if (s == "mean") return ChannelReduction::Mean;
  if (s == "mean-abs") return ChannelReduction::MeanAbs;
  throw UsageError("unknown reduction '" + s + "'");
}

std::string reduction_name(ChannelReduction r) {
  switch (r) {
    case ChannelReduction::None: return "none";
    case ChannelReduction::Mean: return "mean";
    case ChannelReduction::MeanAbs: return "mean-abs";
  }
  return "none";
}

// Threshold flags shared by the attribution commands.
struct ThresholdFlags {
  std::string policy = "percentile";
  double q = 0.9;
  double tau = 0.0;

  void add(CLI::App* app) {
    app->add_option("--tau-policy", policy, "percentile|absolute")
        ->check(CLI::IsMember({"percentile", "absolute"}))
        ->capture_default_str();
    app->add_option("--q", q, "Percentile of activation x gradient products")
        ->capture_default_str();
    app->add_option("--tau", tau, "Absolute threshold")->capture_default_str();
  }
  ThresholdPolicy resolve() const {
    if (policy == "absolute") return AbsoluteThreshold{tau};
    if (!(q >= 0.0 && q < 1.0)) throw UsageError("--q must lie in [0, 1)");
    return PercentileThreshold{q};
  }
  json to_json() const {
    if (policy == "absolute") return {{"kind", "absolute"}, {"tau", tau}};
    return {{"kind", "percentile"}, {"q", q}};
  }
};

std::optional<std::size_t> parse_index(const std::string& s) {
  std::size_t v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

fs::path concept_stem(const fs::path& p) {
  return p.extension() == ".nbt" || p.extension() == ".json" ? fs::path(p).replace_extension()
                                                              : p;
}

// --image file or --data dir --index i.
struct ImageFlags {
  std::string image;
  std::string data;
  std::size_t index = 0;

  void add(CLI::App* app) {
    auto* img = app->add_option("--image", image, "NBT1 tensor (C x H x W) or PGM/PPM image");
    auto* dat = app->add_option("--data", data, "Dataset directory (with --index)");
    img->excludes(dat);
    app->add_option("--index", index, "Image index within --data")->capture_default_str();
  }
  Tensor load(RunManifest& manifest, std::optional<BoxRegion>* region = nullptr) const {
    if (!image.empty()) {
      manifest.add_input(image);
      const fs::path p(image);
      if (p.extension() == ".pgm" || p.extension() == ".ppm" || p.extension() == ".pnm") {
        return image_to_tensor(load_pnm(p));
      }
      return load_tensor(p);
    }
    if (data.empty()) throw UsageError("give --image or --data");
    const LabeledDataset d = load_dataset(data);
    manifest.add_input(fs::path(data) / "images.nbt");
    if (index >= d.size()) throw UsageError("--index is beyond the dataset");
    if (region) *region = d.regions[index];
    return d.images[index];
  }
  json to_json() const {
    if (!image.empty()) return {{"image", image}};
    return {{"data", data}, {"index", index}};
  }
};

// ---------------------------------------------------------------- gen-data

struct GenDataFlags {
  std::string kind = "blackbox";
  SyntheticDatasetSpec spec;
  GreyObjectSpec grey;
  AffineScaling scaling;
  std::string out;
};

void add_gen_data(CLI::App& app, GenDataFlags& f) {
  auto* c = app.add_subcommand("gen-data", "Generate a synthetic dataset");
  c->add_option("--kind", f.kind, "blackbox|grey")
      ->check(CLI::IsMember({"blackbox", "grey"}))
      ->capture_default_str();
  c->add_option("--n", f.spec.n_images, "Number of images")->capture_default_str();
  c->add_option("--image-size", f.spec.image_size, "Image height and width")->capture_default_str();
  c->add_option("--channels", f.spec.channels, "1 or 3 (grey: default 3)");
  c->add_option("--box-size", f.spec.box_size, "Box (object) height")->capture_default_str();
  c->add_option("--box-width", f.spec.box_width, "Box width, 0 for a square box")
      ->capture_default_str();
  c->add_option("--box-fraction", f.spec.box_fraction, "Share of boxed images")
      ->capture_default_str();
  c->add_option("--bg-cell", f.spec.background.cell, "Value-noise lattice spacing")
      ->capture_default_str();
  c->add_option("--bg-low", f.spec.background.low, "Lowest background value")
      ->capture_default_str();
  c->add_option("--bg-high", f.spec.background.high, "Highest background value")
      ->capture_default_str();
  c->add_option("--object-byte", f.grey.object_byte, "Grey: object byte value")
      ->capture_default_str();
  c->add_option("--scale-offset", f.scaling.offset, "Grey: input = (byte - offset) / divisor")
      ->capture_default_str();
  c->add_option("--scale-divisor", f.scaling.divisor, "Grey: scaling divisor")
      ->capture_default_str();
  c->add_option("--seed", f.spec.seed, "Generator seed")->capture_default_str();
  c->add_option("--out", f.out, "Output directory")->required();
}

int cmd_gen_data(const GenDataFlags& f, bool channels_given) {
  Stopwatch clock;
  RunManifest manifest;
  manifest.command = "gen-data";
  LabeledDataset data;
  if (f.kind == "blackbox") {
    f.spec.validate();
    data = gen_synthetic_dataset(f.spec);
    manifest.config = {{"kind", f.kind}, {"spec", to_json(f.spec)}};
  } else {
    GreyObjectSpec g = f.grey;
    g.n_images = f.spec.n_images;
    g.image_size = f.spec.image_size;
    if (channels_given) g.channels = f.spec.channels;
    g.object_size = f.spec.box_size;
    g.object_fraction = f.spec.box_fraction;
    g.cell = f.spec.background.cell;
    g.seed = f.spec.seed;
    g.validate();
    f.scaling.validate();
    data = gen_grey_object_dataset(g, f.scaling);
    manifest.config = {{"kind", f.kind}, {"spec", to_json(g)}, {"scaling", to_json(f.scaling)}};
  }
  manifest.seeds = {{"data", f.spec.seed}};
  const fs::path out(f.out);
  save_dataset(data, out);
  for (const char* name : {"images.nbt", "labels.csv", "boxes.csv"}) manifest.add_output(out / name);
  manifest.duration_seconds = clock.seconds();
  write_manifest(manifest, out / "manifest.json");
  std::size_t boxed = 0;
  for (const auto& r : data.regions) boxed += r.has_value();
  std::cout << "wrote " << data.size() << " images (" << boxed << " boxed) to " << out.string()
            << '\n';
  return kOk;
}

// ------------------------------------------------------------------- train

struct TrainFlags {
  std::string data;
  std::string arch = "classifier";
  TrainConfig train;
  std::size_t n_train = 1000;
  std::vector<std::size_t> widths;
  std::uint64_t net_seed = 7;
  std::size_t latent_dim = 8;
  std::size_t decoder_hidden = 64;
  std::uint64_t decoder_seed = 12;
  std::string resume;
  std::string resume_decoder;
  std::string out;
};

void add_train(CLI::App& app, TrainFlags& f) {
  auto* c = app.add_subcommand("train", "Train a classifier or an autoencoder");
  c->add_option("--data", f.data, "Dataset directory")->required();
  c->add_option("--arch", f.arch, "classifier|encoder")
      ->check(CLI::IsMember({"classifier", "encoder"}))
      ->capture_default_str();
  c->add_option("--lr", f.train.learning_rate, "Learning rate")->capture_default_str();
  c->add_option("--epochs", f.train.epochs, "Epochs")->capture_default_str();
  c->add_option("--batch-size", f.train.batch_size, "Mini-batch size")->capture_default_str();
  c->add_option("--seed", f.train.seed, "Sample-order seed")->capture_default_str();
  c->add_option("--n-train", f.n_train, "Leading images used for training; the rest test")
      ->capture_default_str();
  c->add_option("--widths", f.widths, "Conv widths (classifier 3, encoder 2)");
  c->add_option("--net-seed", f.net_seed, "Initialization seed")->capture_default_str();
  c->add_option("--latent-dim", f.latent_dim, "Encoder latent size")->capture_default_str();
  c->add_option("--decoder-hidden", f.decoder_hidden, "Decoder hidden units")
      ->capture_default_str();
  c->add_option("--decoder-seed", f.decoder_seed, "Decoder initialization seed")
      ->capture_default_str();
  c->add_option("--resume", f.resume, "Start from this checkpoint");
  c->add_option("--resume-decoder", f.resume_decoder, "Decoder checkpoint (encoder arch)");
  c->add_option("--out", f.out, "Output directory")->required();
}

int cmd_train(const TrainFlags& f) {
  Stopwatch clock;
  RunManifest manifest;
  manifest.command = "train";
  f.train.validate();
  const LabeledDataset data = load_dataset(f.data);
  manifest.add_input(fs::path(f.data) / "images.nbt");
  manifest.add_input(fs::path(f.data) / "labels.csv");
  auto [train, test] = split_dataset(data, f.n_train);
  const Shape& shape = train.images.front().shape();
  const fs::path out(f.out);
  fs::create_directories(out);
  json config{{"data", f.data},       {"arch", f.arch},       {"n_train", f.n_train},
              {"widths", f.widths},   {"net_seed", f.net_seed}, {"train", to_json(f.train)},
              {"resume", f.resume}};
  manifest.seeds = {{"net", f.net_seed}, {"train", f.train.seed}};

  auto start = [&](auto build) {
    if (f.resume.empty()) return build();
    manifest.add_input(f.resume);
    return load_checkpoint(f.resume);
  };

  json report;
  if (f.arch == "classifier") {
    std::vector<std::size_t> widths = f.widths.empty() ? std::vector<std::size_t>{8, 16, 32}
                                                       : f.widths;
    SequentialNet net = start([&] { return build_classifier(shape, widths, 2, f.net_seed); });
    const TrainReport r = train_classifier(net, train, test, f.train);
    save_checkpoint(net, out / "model.nbc");
    manifest.add_output(out / "model.nbc");
    report = to_json(r);
    manifest.config = config;
    std::cout << "test accuracy " << format_double(r.test_accuracy) << '\n';
  } else {
    SequentialNet enc = start(
        [&] { return build_encoder(shape, f.latent_dim, f.net_seed, f.widths); });
    SequentialNet dec = build_decoder(enc.output_shape()[0], f.decoder_hidden, shape,
                                      f.decoder_seed);
    if (!f.resume_decoder.empty()) {
      manifest.add_input(f.resume_decoder);
      dec = load_checkpoint(f.resume_decoder);
    }
    const TrainReport r = train_encoder(enc, dec, train, f.train);
    save_checkpoint(enc, out / "encoder.nbc");
    save_checkpoint(dec, out / "decoder.nbc");
    manifest.add_output(out / "encoder.nbc");
    manifest.add_output(out / "decoder.nbc");
    report = {{"epoch_loss", r.epoch_loss}};
    config["latent_dim"] = f.latent_dim;
    config["decoder_hidden"] = f.decoder_hidden;
    config["decoder_seed"] = f.decoder_seed;
    manifest.config = config;
    manifest.seeds["decoder"] = f.decoder_seed;
    std::cout << "final reconstruction loss " << format_double(r.epoch_loss.back()) << '\n';
  }
  write_json(out / "train_report.json", report);
  manifest.add_output(out / "train_report.json");
  manifest.duration_seconds = clock.seconds();
  write_manifest(manifest, out / "manifest.json");
  return kOk;
}

// --------------------------------------------------------------- attribute

struct AttributeFlags {
  std::string model;
  ImageFlags image;
  std::string method = "nobias";
  ThresholdFlags threshold;
  std::string target = "1";
  std::string reduce = "none";
  std::string out;
};

void add_attribute(CLI::App& app, AttributeFlags& f, const std::string& name, bool concept_cmd) {
  auto* c = app.add_subcommand(
      name, concept_cmd ? "Concept saliency of an encoder" : "Saliency map for one input");
  c->add_option(concept_cmd ? "--encoder" : "--model", f.model, "NBC1 checkpoint")->required();
  f.image.add(c);
  c->add_option("--method", f.method, "vanilla|guided|rectgrad|nobias|inputxgrad")
      ->capture_default_str();
  f.threshold.add(c);
  if (concept_cmd) {
    c->add_option("--concept", f.target, "Concept file stem")->required();
  } else {
    c->add_option("--target", f.target, "Class index or concept file stem")
        ->capture_default_str();
  }
  c->add_option("--reduce", f.reduce, "Channel reduction: none|mean|mean-abs")
      ->capture_default_str();
  c->add_option("--out", f.out, "Output directory")->required();
}

int cmd_attribute(const AttributeFlags& f, const std::string& command) {
  Stopwatch clock;
  RunManifest manifest;
  manifest.command = command;
  Method method;
  try {
    method = parse_method(f.method);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  const ChannelReduction reduction = parse_reduction(f.reduce);
  const ThresholdPolicy policy = f.threshold.resolve();
  const SequentialNet net = load_checkpoint(f.model);
  manifest.add_input(f.model);
  const Tensor input = f.image.load(manifest);
  if (input.shape() != net.input_shape()) {
    throw ShapeError("image shape " + shape_string(input.shape()) + " does not match model input " +
                     shape_string(net.input_shape()));
  }

  Tensor seed;
  json target;
  const auto class_index = command == "attribute" ? parse_index(f.target) : std::nullopt;
  if (class_index) {
    if (net.output_shape().size() != 1 || *class_index >= net.output_shape()[0]) {
      throw UsageError("--target class is out of range");
    }
    seed = class_score_seed(Tensor(net.output_shape()), *class_index);
    target = {{"kind", "class"}, {"index", *class_index}};
  } else {
    const fs::path stem = concept_stem(f.target);
    std::string digest;
    const ConceptVector c = load_concept(stem, &digest);
    manifest.add_input(fs::path(stem).concat(".nbt"));
    if (!digest.empty() && digest != sha256_hex(encode_checkpoint(net))) {
      std::cerr << "warning: concept was built from a different encoder\n";
    }
    if (c.direction.shape() != net.output_shape()) {
      throw ShapeError("concept direction does not match the model output");
    }
    seed = c.direction;
    target = {{"kind", "concept"}, {"stem", stem.string()}};
  }

  const SaliencyMap map = attribute_method(net, input, seed, method, policy, reduction);
  const fs::path out(f.out);
  fs::create_directories(out);
  save_tensor(out / "scores.nbt", map.scores);
  manifest.add_output(out / "scores.nbt");
  if (map.reduced) {
    save_tensor(out / "reduced.nbt", *map.reduced);
    manifest.add_output(out / "reduced.nbt");
  }
  json sidecar;
  sidecar["method"] = method_name(method);
  sidecar["descriptor"] = descriptor_to_json(map.method);
  sidecar["target"] = target;
  sidecar["shape"] = map.scores.shape();
  write_json(out / "scores.json", sidecar);
  manifest.add_output(out / "scores.json");
  manifest.config = {{"model", f.model},
                     {"input", f.image.to_json()},
                     {"method", method_name(method)},
                     {"threshold_policy", f.threshold.to_json()},
                     {"target", target},
                     {"reduce", reduction_name(reduction)}};
  manifest.duration_seconds = clock.seconds();
  write_manifest(manifest, out / "manifest.json");
  return kOk;
}

// ------------------------------------------------------------- fd-gradient

struct FdFlags {
  std::string model;
  ImageFlags image;
  std::string target = "1";
  double step = 1e-5;
  std::string out;
};

void add_fd(CLI::App& app, FdFlags& f) {
  auto* c = app.add_subcommand("fd-gradient",
                               "Central finite-difference gradient of a class or concept score");
  c->add_option("--model", f.model, "NBC1 checkpoint")->required();
  f.image.add(c);
  c->add_option("--target", f.target, "Class index or concept file stem")->capture_default_str();
  c->add_option("--step", f.step, "Finite-difference step")->capture_default_str();
  c->add_option("--out", f.out, "Output directory")->required();
}

int cmd_fd(const FdFlags& f) {
  Stopwatch clock;
  RunManifest manifest;
  manifest.command = "fd-gradient";
  if (!(f.step > 0.0)) throw UsageError("--step must be positive");
  const SequentialNet net = load_checkpoint(f.model);
  manifest.add_input(f.model);
  const Tensor input = f.image.load(manifest);
  Tensor seed;
  if (const auto k = parse_index(f.target)) {
    if (net.output_shape().size() != 1 || *k >= net.output_shape()[0]) {
      throw UsageError("--target class is out of range");
    }
    seed = class_score_seed(Tensor(net.output_shape()), *k);
  } else {
    seed = load_concept(concept_stem(f.target)).direction;
  }
  const Tensor grad = finite_difference_gradient(net, input, seed, f.step);
  const fs::path out(f.out);
  fs::create_directories(out);
  save_tensor(out / "gradient.nbt", grad);
  manifest.add_output(out / "gradient.nbt");
  manifest.config = {{"model", f.model},
                     {"input", f.image.to_json()},
                     {"target", f.target},
                     {"step", f.step}};
  manifest.duration_seconds = clock.seconds();
  write_manifest(manifest, out / "manifest.json");
  return kOk;
}

// ------------------------------------------------------------------- audit

struct AuditFlags {
  std::string study;
  std::string model;
  std::string data;
  std::string methods = "rectgrad,nobias,inputxgrad,vanilla";
  ThresholdFlags threshold;
  std::size_t target_class = 1;
  std::size_t samples = 50;
  std::uint64_t sample_seed = 1;
  std::size_t bins = 50;
  std::size_t scatter_cap = 256;
  std::vector<double> reference_values{0.0};
  double band = 0.02;
  std::optional<std::uint64_t> data_seed;
  std::optional<std::size_t> n_images;
  std::optional<double> lr;
  std::optional<std::size_t> epochs;
  std::optional<std::uint64_t> train_seed;
  std::optional<std::uint64_t> net_seed;
  double accuracy_floor = 0.98;
  std::string out;
};

void add_audit(CLI::App& app, AuditFlags& f) {
  auto* c = app.add_subcommand(
      "audit", "Bias audit: run a study end to end (--study) or audit a model on a dataset");
  c->add_option("--study", f.study, "blackbox|grey|concept")
      ->check(CLI::IsMember({"blackbox", "grey", "concept"}));
  c->add_option("--model", f.model, "Checkpoint to audit (without --study)");
  c->add_option("--data", f.data, "Dataset directory (without --study)");
  c->add_option("--methods", f.methods, "Comma-separated methods")->capture_default_str();
  f.threshold.add(c);
  c->add_option("--target-class", f.target_class, "Class attributed (without --study)")
      ->capture_default_str();
  c->add_option("--samples", f.samples, "Images sampled from those with a region")
      ->capture_default_str();
  c->add_option("--sample-seed", f.sample_seed, "Sampling seed")->capture_default_str();
  c->add_option("--bins", f.bins, "Histogram bins")->capture_default_str();
  c->add_option("--scatter-cap", f.scatter_cap, "Scatter rows per image")->capture_default_str();
  c->add_option("--reference", f.reference_values, "Suppression reference values")
      ->capture_default_str();
  c->add_option("--band", f.band, "Suppression band half-width")->capture_default_str();
  c->add_option("--data-seed", f.data_seed, "Study: dataset seed");
  c->add_option("--n", f.n_images, "Study: dataset size");
  c->add_option("--lr", f.lr, "Study: learning rate");
  c->add_option("--epochs", f.epochs, "Study: epochs");
  c->add_option("--train-seed", f.train_seed, "Study: sample-order seed");
  c->add_option("--net-seed", f.net_seed, "Study: initialization seed");
  c->add_option("--accuracy-floor", f.accuracy_floor,
                "Test accuracy below this flags the run invalid (exit 4)")
      ->capture_default_str();
  c->add_option("--out", f.out, "Output directory")->required();
}

AuditConfig audit_config(const AuditFlags& f) {
  AuditConfig a;
  a.methods = parse_methods(f.methods);
  a.policy = f.threshold.resolve();
  a.target_class = f.target_class;
  a.sample_count = f.samples;
  a.sample_seed = f.sample_seed;
  a.histogram_bins = f.bins;
  a.scatter_cap = f.scatter_cap;
  a.reference_values = f.reference_values;
  a.band_half_width = f.band;
  try {
    a.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  return a;
}

template <typename Config>
void apply_study_overrides(const AuditFlags& f, Config& c, std::size_t default_n) {
  if (f.lr) c.train.learning_rate = *f.lr;
  if (f.epochs) c.train.epochs = *f.epochs;
  if (f.train_seed) c.train.seed = *f.train_seed;
  if (f.n_images && *f.n_images != default_n) {
    // keep the same train/test proportion as the default study
    c.n_train = *f.n_images * c.n_train / default_n;
  }
}

int cmd_audit(const AuditFlags& f) {
  Stopwatch clock;
  RunManifest manifest;
  manifest.command = "audit";
  AuditConfig audit = audit_config(f);
  const fs::path out(f.out);
  BiasAuditReport report;
  std::vector<fs::path> extra;

  auto save_net = [&](const SequentialNet& net, const std::string& name) {
    fs::create_directories(out);
    save_checkpoint(net, out / name);
    extra.push_back(out / name);
  };

  if (f.study.empty()) {
    if (f.model.empty() || f.data.empty()) {
      throw UsageError("audit needs --study or both --model and --data");
    }
    const SequentialNet net = load_checkpoint(f.model);
    const LabeledDataset data = load_dataset(f.data);
    manifest.add_input(f.model);
    manifest.add_input(fs::path(f.data) / "images.nbt");
    report = audit_dataset(net, data, audit);
    report.study = "audit";
    const double accuracy = evaluate(net, data);
    report.training = {{"dataset_accuracy", accuracy}};
    report.config = {{"model", f.model},
                     {"data", f.data},
                     {"audit", to_json(audit)},
                     {"accuracy_floor", f.accuracy_floor}};
    if (accuracy < f.accuracy_floor) {
      report.valid = false;
      report.invalid_reason = "dataset accuracy " + format_double(accuracy) +
                              " is below the floor " + format_double(f.accuracy_floor);
    }
    manifest.seeds = {{"sample", f.sample_seed}};
  } else if (f.study == "blackbox") {
    BlackboxStudyConfig c;
    c.audit = audit;
    c.accuracy_floor = f.accuracy_floor;
    if (f.data_seed) c.data.seed = *f.data_seed;
    if (f.net_seed) c.net_seed = *f.net_seed;
    apply_study_overrides(f, c, c.data.n_images);
    if (f.n_images) c.data.n_images = *f.n_images;
    StudyResult r = run_blackbox_study(c);
    save_net(r.net, "model.nbc");
    report = std::move(r.report);
    manifest.seeds = {{"data", c.data.seed}, {"net", c.net_seed}, {"train", c.train.seed},
                      {"sample", c.audit.sample_seed}};
  } else if (f.study == "grey") {
    NormalizationStudyConfig c;
    c.audit = audit;
    c.accuracy_floor = f.accuracy_floor;
    if (f.data_seed) c.data.seed = *f.data_seed;
    if (f.net_seed) c.net_seed = *f.net_seed;
    apply_study_overrides(f, c, c.data.n_images);
    if (f.n_images) c.data.n_images = *f.n_images;
    StudyResult r = normalization_shift_experiment(c);
    save_net(r.net, "model.nbc");
    report = std::move(r.report);
    manifest.seeds = {{"data", c.data.seed}, {"net", c.net_seed}, {"train", c.train.seed},
                      {"sample", c.audit.sample_seed}};
  } else {
    ConceptStudyConfig c;
    audit.sample_count = std::max(audit.sample_count, c.audit.sample_count);
    c.audit = audit;
    if (f.data_seed) c.data.seed = *f.data_seed;
    if (f.net_seed) c.encoder_seed = *f.net_seed;
    apply_study_overrides(f, c, c.data.n_images);
    if (f.n_images) c.data.n_images = *f.n_images;
    ConceptStudyResult r = run_concept_study(c);
    save_net(r.encoder, "encoder.nbc");
    save_net(r.decoder, "decoder.nbc");
    save_concept(r.concept_vector, sha256_hex(encode_checkpoint(r.encoder)), out / "concept");
    extra.push_back(out / "concept.nbt");
    extra.push_back(out / "concept.json");
    report = std::move(r.report);
    manifest.seeds = {{"data", c.data.seed}, {"encoder", c.encoder_seed},
                      {"decoder", c.decoder_seed}, {"train", c.train.seed},
                      {"sample", c.audit.sample_seed}};
  }

  for (const fs::path& p : write_report(report, out)) manifest.add_output(p);
  for (const fs::path& p : extra) manifest.add_output(p);
  manifest.config = report.config;
  manifest.duration_seconds = clock.seconds();
  write_manifest(manifest, out / "manifest.json");

  for (const MethodAudit& a : report.methods) {
    std::cout << method_name(a.method) << ": inside zero fraction "
              << format_double(a.inside_zero_fraction()) << ", inside > outside on "
              << a.images_inside_exceeds_outside << "/" << a.images << " images\n";
  }
  if (!report.valid) throw InvalidRun(report.invalid_reason);
  return kOk;
}

// ------------------------------------------------------------------ render

struct RenderFlags {
  std::string scores;
  std::string out;
  std::string colormap = "diverging";
  std::string normalize = "percentile";
  double percentile = 99.0;
  std::string reduce;
};

void add_render(CLI::App& app, RenderFlags& f) {
  auto* c = app.add_subcommand("render", "Render scores as a diverging heatmap (PPM)");
  c->add_option("--scores", f.scores, "NBT1 scores")->required();
  c->add_option("--out", f.out, "Output .ppm path")->required();
  c->add_option("--colormap", f.colormap, "diverging")
      ->check(CLI::IsMember({"diverging"}))
      ->capture_default_str();
  c->add_option("--normalize", f.normalize, "percentile")
      ->check(CLI::IsMember({"percentile"}))
      ->capture_default_str();
  c->add_option("--percentile", f.percentile, "Percentile of |score| mapped to full colour")
      ->capture_default_str();
  c->add_option("--reduce", f.reduce, "Channel reduction for C x H x W scores: mean|mean-abs");
}

int cmd_render(const RenderFlags& f) {
  Stopwatch clock;
  RunManifest manifest;
  manifest.command = "render";
  if (!(f.percentile > 0.0 && f.percentile <= 100.0)) {
    throw UsageError("--percentile must lie in (0, 100]");
  }
  Tensor scores = load_tensor(f.scores);
  manifest.add_input(f.scores);
  if (scores.rank() == 3) {
    if (f.reduce.empty()) throw UsageError("3-D scores need --reduce mean|mean-abs");
    const ChannelReduction r = parse_reduction(f.reduce);
    if (r == ChannelReduction::None) throw UsageError("3-D scores need --reduce mean|mean-abs");
    scores = reduce_channels(scores, r);
  } else if (scores.rank() != 2) {
    throw UsageError("render needs H x W or C x H x W scores, got " +
                     shape_string(scores.shape()));
  }
  const fs::path out(f.out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  save_pnm(render_heatmap(scores, f.percentile), out);
  manifest.add_output(out);
  manifest.config = {{"scores", f.scores},         {"colormap", f.colormap},
                     {"normalize", f.normalize},   {"percentile", f.percentile},
                     {"reduce", f.reduce}};
  manifest.duration_seconds = clock.seconds();
  write_manifest(manifest, fs::path(out).concat(".manifest.json"));
  return kOk;
}

// ----------------------------------------------------------- concept-build

struct ConceptBuildFlags {
  std::string encoder;
  std::string data;
  std::size_t first = 0;
  std::string out;
};

void add_concept_build(CLI::App& app, ConceptBuildFlags& f) {
  auto* c = app.add_subcommand(
      "concept-build", "Concept vector: latent mean of label-1 minus label-0 images");
  c->add_option("--encoder", f.encoder, "Encoder checkpoint")->required();
  c->add_option("--data", f.data, "Dataset directory")->required();
  c->add_option("--first", f.first, "Use only the first N images (0: all)")
      ->capture_default_str();
  c->add_option("--out", f.out, "Output directory")->required();
}

int cmd_concept_build(const ConceptBuildFlags& f) {
  Stopwatch clock;
  RunManifest manifest;
  manifest.command = "concept-build";
  const SequentialNet enc = load_checkpoint(f.encoder);
  LabeledDataset data = load_dataset(f.data);
  manifest.add_input(f.encoder);
  manifest.add_input(fs::path(f.data) / "images.nbt");
  manifest.add_input(fs::path(f.data) / "labels.csv");
  if (f.first > data.size()) throw UsageError("--first exceeds the dataset size");
  if (f.first > 0) data = data.slice(0, f.first);
  std::vector<Tensor> pos, neg;
  for (std::size_t i = 0; i < data.size(); ++i) {
    (data.labels[i] == 1 ? pos : neg).push_back(data.images[i]);
  }
  const ConceptVector c = build_concept_vector(enc, pos, neg);
  const fs::path out(f.out);
  fs::create_directories(out);
  save_concept(c, sha256_hex(encode_checkpoint(enc)), out / "concept");
  manifest.add_output(out / "concept.nbt");
  manifest.add_output(out / "concept.json");
  manifest.config = {{"encoder", f.encoder}, {"data", f.data}, {"first", f.first}};
  manifest.duration_seconds = clock.seconds();
  write_manifest(manifest, out / "manifest.json");
  std::cout << "concept from " << c.n_pos << " positives and " << c.n_neg << " negatives\n";
  return kOk;
}

int dispatch(const std::vector<std::string>& args) {
  CLI::App app{"Gradient saliency attribution and input-bias audits", "nobias"};
  app.require_subcommand(1, 1);
  app.set_version_flag("--version", std::string(kToolVersion));

  GenDataFlags gen;
  TrainFlags train;
  AttributeFlags attr, concept_attr;
  FdFlags fd;
  AuditFlags audit;
  RenderFlags render;
  ConceptBuildFlags concept_build;
  add_gen_data(app, gen);
  add_train(app, train);
  add_attribute(app, attr, "attribute", false);
  add_fd(app, fd);
  add_audit(app, audit);
  add_render(app, render);
  add_concept_build(app, concept_build);
  add_attribute(app, concept_attr, "concept-attribute", true);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  CLI::App* sub = app.get_subcommands().front();
  const std::string name = sub->get_name();
  if (name == "gen-data") return cmd_gen_data(gen, sub->count("--channels") > 0);
  if (name == "train") return cmd_train(train);
  if (name == "attribute") return cmd_attribute(attr, name);
  if (name == "concept-attribute") return cmd_attribute(concept_attr, name);
  if (name == "fd-gradient") return cmd_fd(fd);
  if (name == "audit") return cmd_audit(audit);
  if (name == "render") return cmd_render(render);
  return cmd_concept_build(concept_build);
}

}  // namespace

int run(const std::vector<std::string>& args) {
  try {
    return dispatch(args);
  } catch (const InvalidRun& e) {
    std::cerr << "run flagged invalid: " << e.what() << '\n';
    return kInvalidRun;
  } catch (const FormatError& e) {
    std::cerr << "format error: " << e.what() << '\n';
    return kIoFormat;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "io error: " << e.what() << '\n';
    return kIoFormat;
  } catch (const std::invalid_argument& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::out_of_range& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailure;
  }
}

}  // namespace nobias::cli
