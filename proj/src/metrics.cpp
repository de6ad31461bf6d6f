#include "restr/metrics.hpp"

#include <cstdio>
#include <sstream>

#include "restr/error.hpp"

namespace restr {

Tensor binarize(const Tensor& pixel_logits) {
  Tensor out(pixel_logits.shape());
  auto src = pixel_logits.values();
  auto dst = out.values();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i] >= 0.0 ? 1.0 : 0.0;
  return out;
}

Overlap overlap(const Tensor& pred, const Tensor& gt) {
  if (pred.shape() != gt.shape()) {
    throw ConfigError("overlap: prediction " + shape_str(pred.shape()) + " and ground truth " +
                      shape_str(gt.shape()) + " differ");
  }
  Overlap o;
  auto p = pred.values();
  auto g = gt.values();
  for (std::size_t i = 0; i < p.size(); ++i) {
    const bool a = p[i] > 0.5, b = g[i] > 0.5;
    o.intersection += a && b;
    o.union_size += a || b;
  }
  return o;
}

double sample_iou(const Overlap& o) {
  if (o.union_size == 0) return 1.0;
  return static_cast<double>(o.intersection) / static_cast<double>(o.union_size);
}

double cumulative_iou(std::span<const Overlap> overlaps) {
  if (overlaps.empty()) throw ConfigError("cumulative_iou: no samples");
  std::size_t inter = 0, uni = 0;
  for (const auto& o : overlaps) {
    inter += o.intersection;
    uni += o.union_size;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

double cumulative_iou(std::span<const Tensor> preds, std::span<const Tensor> gts) {
  if (preds.size() != gts.size()) {
    throw ConfigError("cumulative_iou: " + std::to_string(preds.size()) + " predictions for " +
                      std::to_string(gts.size()) + " targets");
  }
  std::vector<Overlap> o;
  for (std::size_t i = 0; i < preds.size(); ++i) o.push_back(overlap(preds[i], gts[i]));
  return cumulative_iou(o);
}

double prec_at(std::span<const double> ious, double threshold) {
  if (ious.empty()) return 0.0;
  std::size_t hits = 0;
  for (double v : ious) hits += v >= threshold;
  return static_cast<double>(hits) / static_cast<double>(ious.size());
}

std::string LengthBucket::label() const {
  return lo == hi ? std::to_string(lo) : std::to_string(lo) + "-" + std::to_string(hi);
}

std::vector<LengthBucket> parse_buckets(const std::string& spec) {
  std::vector<LengthBucket> out;
  std::istringstream is(spec);
  for (std::string item; std::getline(is, item, ',');) {
    LengthBucket b;
    const auto dash = item.find('-');
    try {
      std::size_t used = 0;
      if (dash == std::string::npos) {
        b.lo = b.hi = std::stoul(item, &used);
        if (used != item.size()) throw std::invalid_argument(item);
      } else {
        b.lo = std::stoul(item.substr(0, dash), &used);
        if (used != dash) throw std::invalid_argument(item);
        const std::string rest = item.substr(dash + 1);
        b.hi = std::stoul(rest, &used);
        if (used != rest.size()) throw std::invalid_argument(item);
      }
    } catch (const std::exception&) {
      throw ConfigError("bucket '" + item + "' is not of the form N or N-M");
    }
    if (b.lo == 0 || b.lo > b.hi) throw ConfigError("bucket '" + item + "' is empty or starts at zero");
    if (!out.empty() && b.lo <= out.back().hi) throw ConfigError("buckets must be increasing and disjoint");
    out.push_back(b);
  }
  if (out.empty()) throw ConfigError("no length buckets given");
  return out;
}

std::vector<BucketResult> bucket_by_length(std::span<const std::size_t> lengths, std::span<const Overlap> overlaps,
                                           const std::vector<LengthBucket>& buckets) {
  if (lengths.size() != overlaps.size()) throw ConfigError("bucket_by_length: lengths and overlaps differ in size");
  std::vector<BucketResult> out;
  for (const auto& b : buckets) out.push_back({b, 0, {}, 0.0});
  for (std::size_t i = 0; i < lengths.size(); ++i) {
    bool placed = false;
    for (auto& r : out) {
      if (lengths[i] >= r.bucket.lo && lengths[i] <= r.bucket.hi) {
        ++r.count;
        r.totals.intersection += overlaps[i].intersection;
        r.totals.union_size += overlaps[i].union_size;
        placed = true;
        break;
      }
    }
    if (!placed) throw ConfigError("expression length " + std::to_string(lengths[i]) + " is not covered by any bucket");
  }
  for (auto& r : out) {
    r.iou = r.totals.union_size == 0 ? 0.0
                                      : static_cast<double>(r.totals.intersection) / static_cast<double>(r.totals.union_size);
  }
  return out;
}

EvalReport make_report(std::span<const std::size_t> lengths, std::span<const Overlap> overlaps,
                       const std::vector<LengthBucket>& buckets) {
  EvalReport r;
  r.cumulative_iou = cumulative_iou(overlaps);
  for (const auto& o : overlaps) {
    r.totals.intersection += o.intersection;
    r.totals.union_size += o.union_size;
    r.ious.push_back(sample_iou(o));
  }
  for (double t : kPrecThresholds) r.prec.emplace_back(t, prec_at(r.ious, t));
  r.buckets = bucket_by_length(lengths, overlaps, buckets);
  return r;
}

namespace {
std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}
}  // namespace

std::string report_csv(const EvalReport& report) {
  std::ostringstream os;
  os << "metric,value,count,intersection,union\n";
  os << "cumulative_iou," << fmt(report.cumulative_iou) << ',' << report.ious.size() << ','
     << report.totals.intersection << ',' << report.totals.union_size << '\n';
  for (auto [t, v] : report.prec) os << "prec@" << fmt(t).substr(0, 3) << ',' << fmt(v) << ',' << report.ious.size() << ",,\n";
  for (const auto& b : report.buckets) {
    os << "bucket:" << b.bucket.label() << ',' << fmt(b.iou) << ',' << b.count << ',' << b.totals.intersection << ','
       << b.totals.union_size << '\n';
  }
  return os.str();
}

std::string report_table(const EvalReport& report) {
  std::ostringstream os;
  os << "samples          " << report.ious.size() << '\n';
  os << "cumulative IoU   " << fmt(100.0 * report.cumulative_iou) << " %\n";
  for (auto [t, v] : report.prec) os << "Prec@" << fmt(t).substr(0, 3) << "         " << fmt(100.0 * v) << " %\n";
  os << "length bucket    count   IoU %\n";
  for (const auto& b : report.buckets) {
    std::string label = b.bucket.label();
    label.resize(16, ' ');
    std::string count = std::to_string(b.count);
    count.resize(8, ' ');
    os << label << ' ' << count << fmt(100.0 * b.iou) << '\n';
  }
  return os.str();
}

}  // namespace restr
