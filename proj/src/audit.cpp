#include "nobias/audit.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "nobias/errors.hpp"
#include "nobias/rng.hpp"

namespace nobias {
namespace {

class RegionAccumulator {
 public:
  void add(double v) {
    ++count_;
    sum_ += v;
    sum_abs_ += std::abs(v);
    min_ = std::min(min_, v);
    max_ = std::max(max_, v);
    if (v == 0.0) ++zeros_;
  }
  void merge(const RegionAccumulator& o) {
    count_ += o.count_;
    sum_ += o.sum_;
    sum_abs_ += o.sum_abs_;
    min_ = std::min(min_, o.min_);
    max_ = std::max(max_, o.max_);
    zeros_ += o.zeros_;
  }
  RegionStats stats() const {
    if (count_ == 0) return {};
    const auto n = static_cast<double>(count_);
    return {count_, sum_ / n, sum_abs_ / n, min_, max_, static_cast<double>(zeros_) / n};
  }

 private:
  std::size_t count_ = 0;
  double sum_ = 0.0;
  double sum_abs_ = 0.0;
  double min_ = std::numeric_limits<double>::infinity();
  double max_ = -std::numeric_limits<double>::infinity();
  std::size_t zeros_ = 0;
};

struct RegionSplit {
  RegionAccumulator inside;
  RegionAccumulator outside;
};

RegionSplit split_region(const Tensor& scores2d, const BoxRegion& region,
                         const HistogramBins* bins, std::vector<std::size_t>* hist_in,
                         std::vector<std::size_t>* hist_out) {
  if (scores2d.rank() != 2) {
    throw ShapeError("region statistics need an H x W map, got " +
                     shape_string(scores2d.shape()));
  }
  const std::size_t H = scores2d.extent(0), W = scores2d.extent(1);
  if (region.height == 0 || region.width == 0 || region.row + region.height > H ||
      region.col + region.width > W) {
    throw std::out_of_range("region lies outside the " + shape_string(scores2d.shape()) + " map");
  }
  RegionSplit split;
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t x = 0; x < W; ++x) {
      const double v = scores2d[y * W + x];
      const bool in = region.contains(y, x);
      (in ? split.inside : split.outside).add(v);
      if (bins) ++(*(in ? hist_in : hist_out))[bins->bin_of(v)];
    }
  }
  return split;
}

const Tensor& reduced_or(const SaliencyMap& map, Tensor& storage) {
  if (map.reduced) return *map.reduced;
  storage = reduce_channels(map.scores, ChannelReduction::Mean);
  return storage;
}

Tensor channel_mean(const Tensor& t) { return reduce_channels(t, ChannelReduction::Mean); }

std::vector<std::size_t> sample_indices(const LabeledDataset& data, std::size_t count,
                                        std::uint64_t seed) {
  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (data.regions[i]) candidates.push_back(i);
  }
  if (candidates.empty()) throw std::invalid_argument("audit: dataset has no images with regions");
  if (count < candidates.size()) {
    Rng rng(seed);
    for (std::size_t i = 0; i < count; ++i) {
      std::swap(candidates[i], candidates[i + rng.below(candidates.size() - i)]);
    }
    candidates.resize(count);
    std::sort(candidates.begin(), candidates.end());
  }
  return candidates;
}

nlohmann::ordered_json policy_json(const ThresholdPolicy& p) {
  if (const auto* q = std::get_if<PercentileThreshold>(&p)) {
    return {{"kind", "percentile"}, {"q", q->q}};
  }
  return {{"kind", "absolute"}, {"tau", std::get<AbsoluteThreshold>(p).tau}};
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  os << text;
  if (!os) throw std::runtime_error("failed writing " + path.string());
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

nlohmann::ordered_json to_json(const RegionStats& s) {
  if (s.empty()) return {{"count", 0}, {"empty", true}};
  return {{"count", s.count}, {"mean", s.mean}, {"mean_abs", s.mean_abs},
          {"min", s.min},     {"max", s.max},   {"zero_fraction", s.zero_fraction}};
}

HistogramBins HistogramBins::uniform(double lo, double hi, std::size_t bins) {
  if (bins < 1) throw std::invalid_argument("histogram needs at least one bin");
  if (!(hi > lo)) {
    lo -= 0.5;
    hi = lo + 1.0;
  }
  HistogramBins h;
  h.edges.resize(bins + 1);
  const double width = (hi - lo) / static_cast<double>(bins);
  for (std::size_t i = 0; i <= bins; ++i) h.edges[i] = lo + width * static_cast<double>(i);
  h.edges.back() = hi;
  return h;
}

std::size_t HistogramBins::bin_of(double v) const {
  const double lo = edges.front(), hi = edges.back();
  const double t = (v - lo) / (hi - lo) * static_cast<double>(bin_count());
  if (!(t > 0.0)) return 0;
  return std::min(static_cast<std::size_t>(t), bin_count() - 1);
}

InsideOutside inside_outside_stats(const Tensor& scores2d, const BoxRegion& region,
                                   const HistogramBins* bins) {
  InsideOutside r;
  if (bins) {
    r.hist_inside.assign(bins->bin_count(), 0);
    r.hist_outside.assign(bins->bin_count(), 0);
  }
  const RegionSplit split = split_region(scores2d, region, bins, &r.hist_inside, &r.hist_outside);
  r.inside = split.inside.stats();
  r.outside = split.outside.stats();
  return r;
}

InsideOutside inside_outside_stats(const SaliencyMap& map, const BoxRegion& region,
                                   const HistogramBins* bins) {
  Tensor storage;
  return inside_outside_stats(reduced_or(map, storage), region, bins);
}

std::vector<ScatterRow> scatter_export(const Tensor& input, const SaliencyMap& map,
                                       std::size_t sample_cap, std::uint64_t seed) {
  require_same_shape(input, map.scores, "scatter_export");
  const Tensor px = channel_mean(input);
  const Tensor sc = channel_mean(map.scores);
  std::vector<std::size_t> idx(px.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (sample_cap < idx.size()) {
    Rng rng(seed);
    for (std::size_t i = 0; i < sample_cap; ++i) {
      std::swap(idx[i], idx[i + rng.below(idx.size() - i)]);
    }
    idx.resize(sample_cap);
    std::sort(idx.begin(), idx.end());
  }
  std::vector<ScatterRow> rows;
  rows.reserve(idx.size());
  for (std::size_t i : idx) rows.push_back({px[i], sc[i]});
  return rows;
}

SuppressionResult suppression_metric(const Tensor& input, const Tensor& biased,
                                     const Tensor& unbiased, double reference,
                                     double half_width) {
  SuppressionAccumulator acc(reference, half_width);
  acc.add(input, biased, unbiased);
  return acc.result();
}

SuppressionAccumulator::SuppressionAccumulator(double reference, double half_width)
    : reference_(reference), half_width_(half_width) {
  if (!(half_width > 0.0)) throw std::invalid_argument("band half-width must be positive");
}

void SuppressionAccumulator::add(const Tensor& input, const Tensor& biased,
                                 const Tensor& unbiased) {
  require_same_shape(input, biased, "suppression_metric");
  require_same_shape(input, unbiased, "suppression_metric");
  for (std::size_t i = 0; i < input.size(); ++i) {
    if (std::abs(input[i] - reference_) > half_width_) continue;
    ++count_;
    biased_sum_ += std::abs(biased[i]);
    unbiased_sum_ += std::abs(unbiased[i]);
  }
}

SuppressionResult SuppressionAccumulator::result() const {
  SuppressionResult r;
  r.band_count = count_;
  if (count_ > 0 && unbiased_sum_ > 0.0) r.ratio = biased_sum_ / unbiased_sum_;
  return r;
}

void AuditConfig::validate() const {
  if (methods.empty()) throw std::invalid_argument("audit needs at least one method");
  if (sample_count < 1) throw std::invalid_argument("sample_count must be positive");
  if (histogram_bins < 1) throw std::invalid_argument("histogram_bins must be positive");
  if (!(band_half_width > 0.0)) throw std::invalid_argument("band half-width must be positive");
  if (const auto* q = std::get_if<PercentileThreshold>(&policy)) {
    if (!(q->q >= 0.0 && q->q < 1.0)) throw std::invalid_argument("q must lie in [0, 1)");
  }
}

nlohmann::ordered_json to_json(const AuditConfig& c) {
  nlohmann::ordered_json methods = nlohmann::ordered_json::array();
  for (Method m : c.methods) methods.push_back(method_name(m));
  return {{"methods", methods},
          {"threshold_policy", policy_json(c.policy)},
          {"target_class", c.target_class},
          {"sample_count", c.sample_count},
          {"sample_seed", c.sample_seed},
          {"histogram_bins", c.histogram_bins},
          {"scatter_cap_per_image", c.scatter_cap},
          {"reference_values", c.reference_values},
          {"band_half_width", c.band_half_width}};
}

double MethodAudit::separation_fraction() const {
  return images == 0 ? 0.0
                     : static_cast<double>(images_inside_exceeds_outside) /
                           static_cast<double>(images);
}

const MethodAudit& BiasAuditReport::audit_for(Method m) const {
  for (const MethodAudit& a : methods) {
    if (a.method == m) return a;
  }
  throw std::out_of_range("report has no audit for " + method_name(m));
}

BiasAuditReport audit_dataset(const SequentialNet& net, const LabeledDataset& data,
                              const AuditConfig& config) {
  if (net.output_shape().size() != 1 || config.target_class >= net.output_shape()[0]) {
    throw std::out_of_range("audit target class out of range");
  }
  return audit_with_seed(net, data,
                         class_score_seed(Tensor(net.output_shape()), config.target_class), config);
}

BiasAuditReport audit_with_seed(const SequentialNet& net, const LabeledDataset& data,
                                const Tensor& seed, const AuditConfig& config) {
  config.validate();
  data.validate();
  if (seed.shape() != net.output_shape()) {
    throw ShapeError("audit seed shape " + shape_string(seed.shape()) + " does not match output " +
                     shape_string(net.output_shape()));
  }
  BiasAuditReport report;
  report.config = to_json(config);
  report.sampled_images = sample_indices(data, config.sample_count, config.sample_seed);

  for (Method method : config.methods) {
    const MethodSpec spec = method_spec(method, config.policy);
    MethodAudit audit;
    audit.method = method;
    audit.descriptor = {spec.rule, spec.finalization, ChannelReduction::Mean, {}};

    std::vector<SuppressionAccumulator> suppression;
    for (double v : config.reference_values) suppression.emplace_back(v, config.band_half_width);

    std::vector<Tensor> reduced;
    std::vector<double> tau_sums;
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    for (std::size_t idx : report.sampled_images) {
      const Tensor& image = data.images[idx];
      SaliencyMap map = attribute(net, image, seed, spec.rule, spec.finalization,
                                  ChannelReduction::Mean);
      const InsideOutside io = inside_outside_stats(map, *data.regions[idx]);
      ++audit.images;
      if (io.inside.mean_abs > io.outside.mean_abs) ++audit.images_inside_exceeds_outside;
      if (io.inside.zero_fraction == 1.0) ++audit.images_fully_zero_inside;

      tau_sums.resize(map.method.layer_thresholds.size(), 0.0);
      for (std::size_t k = 0; k < tau_sums.size(); ++k) tau_sums[k] += map.method.layer_thresholds[k];

      const auto rows = scatter_export(image, map, config.scatter_cap,
                                       derive_seed(config.sample_seed, idx));
      audit.scatter.insert(audit.scatter.end(), rows.begin(), rows.end());

      if (spec.finalization == FinalizationMode::MultiplyInput) {
        const Tensor unbiased =
            attribute(net, image, seed, spec.rule, FinalizationMode::Identity).scores;
        for (auto& acc : suppression) acc.add(image, map.scores, unbiased);
      }
      const Tensor& r = *map.reduced;
      for (double v : r.data()) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
      reduced.push_back(r);
    }

    audit.bins = HistogramBins::uniform(lo, hi, config.histogram_bins);
    audit.hist_inside.assign(config.histogram_bins, 0);
    audit.hist_outside.assign(config.histogram_bins, 0);
    RegionAccumulator inside, outside;
    for (std::size_t k = 0; k < reduced.size(); ++k) {
      RegionSplit split = split_region(reduced[k], *data.regions[report.sampled_images[k]],
                                       &audit.bins, &audit.hist_inside, &audit.hist_outside);
      inside.merge(split.inside);
      outside.merge(split.outside);
    }
    audit.inside = inside.stats();
    audit.outside = outside.stats();
    for (double s : tau_sums) audit.mean_layer_thresholds.push_back(s / static_cast<double>(audit.images));

    if (spec.finalization == FinalizationMode::MultiplyInput) {
      const Method against = spec.rule.kind == RuleKind::Rectified ? Method::NoBias
                             : spec.rule.kind == RuleKind::Guided  ? Method::Guided
                                                                   : Method::Vanilla;
      for (const auto& acc : suppression) {
        audit.suppression.push_back(
            {acc.reference(), acc.half_width(), method_name(against), acc.result()});
      }
    }
    report.methods.push_back(std::move(audit));
  }
  return report;
}

nlohmann::ordered_json to_json(const BiasAuditReport& report) {
  nlohmann::ordered_json j;
  j["study"] = report.study;
  j["valid"] = report.valid;
  j["invalid_reason"] = report.invalid_reason;
  j["config"] = report.config;
  j["training"] = report.training;
  j["sampled_images"] = report.sampled_images;
  j["separation_criterion"] =
      "images_inside_exceeds_outside counts sampled images whose inside-region mean |score| "
      "exceeds the outside mean |score| (harness-defined operationalization)";
  j["methods"] = nlohmann::ordered_json::array();
  for (const MethodAudit& a : report.methods) {
    nlohmann::ordered_json m;
    m["method"] = method_name(a.method);
    m["descriptor"] = descriptor_to_json(a.descriptor);
    m["images"] = a.images;
    m["inside"] = to_json(a.inside);
    m["outside"] = to_json(a.outside);
    m["inside_zero_fraction"] = a.inside_zero_fraction();
    m["images_fully_zero_inside"] = a.images_fully_zero_inside;
    m["images_inside_exceeds_outside"] = a.images_inside_exceeds_outside;
    m["separation_fraction"] = a.separation_fraction();
    m["mean_layer_thresholds"] = a.mean_layer_thresholds;
    m["histogram"] = {{"edges", a.bins.edges},
                      {"inside", a.hist_inside},
                      {"outside", a.hist_outside}};
    m["suppression"] = nlohmann::ordered_json::array();
    for (const SuppressionEntry& s : a.suppression) {
      nlohmann::ordered_json e{{"reference_value", s.reference_value},
                               {"half_width", s.half_width},
                               {"against", s.against},
                               {"band_count", s.result.band_count}};
      e["ratio"] = s.result.ratio ? nlohmann::ordered_json(*s.result.ratio) : nlohmann::ordered_json();
      m["suppression"].push_back(e);
    }
    j["methods"].push_back(m);
  }
  return j;
}

std::vector<std::filesystem::path> write_report(const BiasAuditReport& report,
                                                const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> written;
  written.push_back(dir / "report.json");
  write_text(written.back(), to_json(report).dump(2) + "\n");
  for (const MethodAudit& a : report.methods) {
    std::string scatter = "pixel_value,score\n";
    for (const ScatterRow& r : a.scatter) {
      scatter += format_double(r.pixel_value) + "," + format_double(r.score) + "\n";
    }
    written.push_back(dir / ("scatter_" + method_name(a.method) + ".csv"));
    write_text(written.back(), scatter);

    std::string hist = "bin_lo,bin_hi,count_inside,count_outside\n";
    for (std::size_t b = 0; b < a.bins.bin_count(); ++b) {
      hist += format_double(a.bins.edges[b]) + "," + format_double(a.bins.edges[b + 1]) + "," +
              std::to_string(a.hist_inside[b]) + "," + std::to_string(a.hist_outside[b]) + "\n";
    }
    written.push_back(dir / ("histogram_" + method_name(a.method) + ".csv"));
    write_text(written.back(), hist);
  }
  return written;
}

}  // namespace nobias
