// Copyright 2026 The GCC-UNet Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef GCU_METRICS_HPP_
#define GCU_METRICS_HPP_

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace gcu {

/// Binary mask on a raster; value semantics, 8-connectivity.
struct Mask {
  int64_t height = 0, width = 0;
  std::vector<uint8_t> bits;

  static Mask from_doubles(const std::vector<double>& v, int64_t h, int64_t w);
  int64_t count() const;
  bool empty() const { return count() == 0; }
};

int64_t connected_components(const Mask& m);
Mask dilate_disc(const Mask& m, int64_t radius);
/// Zhang-Suen morphological thinning.
Mask skeletonize(const Mask& m);

struct CalResult {
  std::optional<double> c, a, l, f;
};

/// Connectivity / area / length metrics, F = C*A*L. Undefined when the
/// ground truth is empty.
CalResult cal_metrics(const Mask& pred, const Mask& gt);

struct MetricsReport {
  int64_t tp = 0, tn = 0, fp = 0, fn = 0;
  std::optional<double> se, sp, acc, precision, recall, f1;
  std::optional<double> auroc, mcc;
  std::optional<double> c, a, l, f;

  std::string to_json() const;
  std::string table() const;
};

/// Confusion-derived fractions from raw counts; degenerate denominators
/// yield unset fields rather than zeros.
MetricsReport confusion_metrics(int64_t tp, int64_t tn, int64_t fp,
                                int64_t fn);

/// Rank-based AUROC with midrank tie handling; equals pair counting with
/// half-credit ties. Undefined if either class is absent.
std::optional<double> auroc(const std::vector<double>& scores,
                            const std::vector<uint8_t>& labels);

std::optional<double> matthews_corrcoef(int64_t tp, int64_t tn, int64_t fp,
                                        int64_t fn);

}  // namespace gcu

#endif  // GCU_METRICS_HPP_
