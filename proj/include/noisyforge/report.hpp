#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "noisyforge/data.hpp"
#include "noisyforge/eval.hpp"
#include "noisyforge/scan.hpp"

namespace noisyforge {

// sigma,mean_acc,std_acc,repeats
std::string curve_csv(const RobustnessCurve& curve);
// Throws FormatError on a missing header or malformed rows. clean_accuracy is
// not part of the format and reads back as 0.
RobustnessCurve parse_curve_csv(std::string_view text, const std::string& origin);

// sigma,mean_acc,std_acc,repeats,provenance
std::string upper_bound_csv(const UpperBoundCurve& upper);
UpperBoundCurve parse_upper_bound_csv(std::string_view text, const std::string& origin);

// alpha,theta,rauc_percent,preserved_acc_pp,status
std::string scan_csv(const std::vector<ScanCell>& cells);

struct MetricsSummary {
  double auc = 0.0;
  std::optional<double> rauc_percent;
  std::optional<double> preserved_accuracy_pp;
  std::optional<double> sigma_train;
};
std::string metrics_summary_json(const MetricsSummary& summary);

std::string selection_json(const Selection& selection, double sigma_train, std::size_t failed_cells);

// series,sigma,mean_acc,std_acc in long format, one block per series.
std::string plot_data_csv(const std::vector<std::pair<std::string, RobustnessCurve>>& series);

// Counts, normalization statistics and source hashes of a loaded dataset.
std::string dataset_metadata_json(const Dataset& train, const Dataset& test);

}  // namespace noisyforge
