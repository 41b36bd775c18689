#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nobias/attribution.hpp"
#include "nobias/dataset.hpp"
#include "nobias/network.hpp"

namespace nobias {

struct RegionStats {
  std::size_t count = 0;
  double mean = 0.0;
  double mean_abs = 0.0;
  double min = 0.0;
  double max = 0.0;
  double zero_fraction = 0.0;

  bool empty() const { return count == 0; }
};

nlohmann::ordered_json to_json(const RegionStats& s);

// Uniform bins over [edges.front(), edges.back()].
struct HistogramBins {
  std::vector<double> edges;

  static HistogramBins uniform(double lo, double hi, std::size_t bins);
  std::size_t bin_count() const { return edges.size() - 1; }
  std::size_t bin_of(double v) const;
};

struct InsideOutside {
  RegionStats inside;
  RegionStats outside;
  std::vector<std::size_t> hist_inside;  // filled only when bins were given
  std::vector<std::size_t> hist_outside;
};

// Statistics of a 2-D (H x W) score map inside vs outside `region`.
InsideOutside inside_outside_stats(const Tensor& scores2d, const BoxRegion& region,
                                   const HistogramBins* bins = nullptr);
// Uses the map's reduced scores, reducing by channel mean when absent.
InsideOutside inside_outside_stats(const SaliencyMap& map, const BoxRegion& region,
                                   const HistogramBins* bins = nullptr);

struct ScatterRow {
  double pixel_value = 0.0;  // channel mean of the network input
  double score = 0.0;        // channel mean of the saliency scores
};

// One row per pixel; when there are more pixels than sample_cap a seeded
// subset of sample_cap pixels is kept, in pixel order.
std::vector<ScatterRow> scatter_export(const Tensor& input, const SaliencyMap& map,
                                       std::size_t sample_cap, std::uint64_t seed = 0);

struct SuppressionResult {
  std::optional<double> ratio;  // empty when the band is empty or the denominator is 0
  std::size_t band_count = 0;
};

// mean |biased| / mean |unbiased| over input elements within
// [reference - half_width, reference + half_width].
SuppressionResult suppression_metric(const Tensor& input, const Tensor& biased,
                                     const Tensor& unbiased, double reference,
                                     double half_width);

// Pools suppression_metric over several images.
class SuppressionAccumulator {
 public:
  SuppressionAccumulator(double reference, double half_width);
  void add(const Tensor& input, const Tensor& biased, const Tensor& unbiased);
  SuppressionResult result() const;
  double reference() const { return reference_; }
  double half_width() const { return half_width_; }

 private:
  double reference_;
  double half_width_;
  std::size_t count_ = 0;
  double biased_sum_ = 0.0;
  double unbiased_sum_ = 0.0;
};

struct AuditConfig {
  std::vector<Method> methods{Method::RectGrad, Method::NoBias, Method::InputXGrad,
                              Method::Vanilla};
  ThresholdPolicy policy = PercentileThreshold{0.9};
  std::size_t target_class = 1;
  std::size_t sample_count = 50;
  std::uint64_t sample_seed = 1;
  std::size_t histogram_bins = 50;
  std::size_t scatter_cap = 256;  // per image
  std::vector<double> reference_values{0.0};
  double band_half_width = 0.02;

  void validate() const;
};

nlohmann::ordered_json to_json(const AuditConfig& c);

struct SuppressionEntry {
  double reference_value = 0.0;
  double half_width = 0.0;
  std::string against;  // identity-finalized counterpart
  SuppressionResult result;
};

struct MethodAudit {
  Method method = Method::Vanilla;
  MethodDescriptor descriptor;
  RegionStats inside;   // pooled over sampled images
  RegionStats outside;
  HistogramBins bins;
  std::vector<std::size_t> hist_inside;
  std::vector<std::size_t> hist_outside;
  std::size_t images = 0;
  std::size_t images_inside_exceeds_outside = 0;  // inside mean |s| > outside mean |s|
  std::size_t images_fully_zero_inside = 0;
  std::vector<ScatterRow> scatter;
  std::vector<SuppressionEntry> suppression;
  std::vector<double> mean_layer_thresholds;  // rectified rules only

  double separation_fraction() const;
  double inside_zero_fraction() const { return inside.zero_fraction; }
};

struct BiasAuditReport {
  std::string study;
  nlohmann::ordered_json config;
  std::vector<std::size_t> sampled_images;
  std::vector<MethodAudit> methods;
  nlohmann::ordered_json training;  // null when the study did not train
  bool valid = true;
  std::string invalid_reason;

  const MethodAudit& audit_for(Method m) const;
};

// Attributes the target class on a seeded sample of the dataset's images that
// carry a region and aggregates inside/outside statistics per method.
BiasAuditReport audit_dataset(const SequentialNet& net, const LabeledDataset& data,
                              const AuditConfig& config);
// Same with an explicit gradient seed at the net's output (e.g. a concept
// direction); config.target_class is ignored.
BiasAuditReport audit_with_seed(const SequentialNet& net, const LabeledDataset& data,
                                const Tensor& seed, const AuditConfig& config);

nlohmann::ordered_json to_json(const BiasAuditReport& report);

// report.json, scatter_<method>.csv (pixel_value,score) and
// histogram_<method>.csv (bin_lo,bin_hi,count_inside,count_outside).
// Returns the written paths.
std::vector<std::filesystem::path> write_report(const BiasAuditReport& report,
                                                const std::filesystem::path& dir);

// Shortest round-trip decimal text of a double.
std::string format_double(double v);

}  // namespace nobias
