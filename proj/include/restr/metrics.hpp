#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "restr/tensor.hpp"

namespace restr {

// 1 where sigmoid(logit) >= 0.5, i.e. logit >= 0.
Tensor binarize(const Tensor& pixel_logits);

struct Overlap {
  std::size_t intersection = 0;
  std::size_t union_size = 0;
};

// Pixel counts of pred AND gt / pred OR gt for binary masks of equal shape.
Overlap overlap(const Tensor& pred, const Tensor& gt);

// Per-sample IoU. An empty prediction of an empty target counts as 1.
double sample_iou(const Overlap& o);

// Total intersection over total union (not the mean of per-sample IoUs).
double cumulative_iou(std::span<const Overlap> overlaps);
double cumulative_iou(std::span<const Tensor> preds, std::span<const Tensor> gts);

// Fraction of samples with IoU >= threshold.
double prec_at(std::span<const double> ious, double threshold);

inline constexpr double kPrecThresholds[] = {0.5, 0.6, 0.7, 0.8, 0.9};

// Inclusive token-length range.
struct LengthBucket {
  std::size_t lo = 1, hi = 1;
  std::string label() const;
};

// "1-2,3,4-5,6-20"
std::vector<LengthBucket> parse_buckets(const std::string& spec);

struct BucketResult {
  LengthBucket bucket;
  std::size_t count = 0;
  Overlap totals;
  double iou = 0.0;
};

// Cumulative IoU within each bucket. Throws ConfigError when a length falls
// outside every bucket.
std::vector<BucketResult> bucket_by_length(std::span<const std::size_t> lengths, std::span<const Overlap> overlaps,
                                           const std::vector<LengthBucket>& buckets);

struct EvalReport {
  double cumulative_iou = 0.0;
  Overlap totals;
  std::vector<double> ious;
  std::vector<std::pair<double, double>> prec;  // threshold -> fraction
  std::vector<BucketResult> buckets;
};

EvalReport make_report(std::span<const std::size_t> lengths, std::span<const Overlap> overlaps,
                       const std::vector<LengthBucket>& buckets);

// metric,value rows: cumulative_iou, prec@X, bucket:<label> (with count).
std::string report_csv(const EvalReport& report);
std::string report_table(const EvalReport& report);

}  // namespace restr
