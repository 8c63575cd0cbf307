#include "noisyforge/report.hpp"

#include <json.hpp>
#include <sstream>

#include "noisyforge/error.hpp"
#include "noisyforge/format.hpp"

namespace noisyforge {
namespace {

using nlohmann::ordered_json;

double parse_double(const std::string& field, const std::string& origin, std::size_t line) {
  try {
    std::size_t used = 0;
    const double v = std::stod(field, &used);
    if (used != field.size()) throw std::invalid_argument(field);
    return v;
  } catch (const std::exception&) {
    throw FormatError(origin + ": line " + std::to_string(line) + ": '" + field + "' is not a number");
  }
}

RobustnessCurve parse_curve_rows(const std::vector<std::vector<std::string>>& rows, const std::string& origin,
                                 std::size_t columns, std::vector<std::string>* provenance) {
  RobustnessCurve curve;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& r = rows[i];
    if (r.size() != columns) {
      throw FormatError(origin + ": line " + std::to_string(i + 1) + " has " + std::to_string(r.size()) +
                        " fields, expected " + std::to_string(columns));
    }
    curve.sigmas.push_back(parse_double(r[0], origin, i + 1));
    curve.mean_accuracy.push_back(parse_double(r[1], origin, i + 1));
    curve.std_accuracy.push_back(parse_double(r[2], origin, i + 1));
    const double repeats = parse_double(r[3], origin, i + 1);
    curve.repeats = static_cast<std::size_t>(repeats);
    if (provenance) provenance->push_back(r[4]);
  }
  try {
    curve.validate();
  } catch (const UsageError& e) {
    throw FormatError(origin + ": " + e.what());
  }
  return curve;
}

void expect_header(const std::vector<std::vector<std::string>>& rows, const std::vector<std::string>& header,
                   const std::string& origin) {
  if (rows.empty() || rows.front() != header) {
    std::string joined;
    for (const auto& h : header) joined += (joined.empty() ? "" : ",") + h;
    throw FormatError(origin + ": missing header row '" + joined + "'");
  }
}

ordered_json optional_number(const std::optional<double>& v) { return v ? ordered_json(*v) : ordered_json(nullptr); }

}  // namespace

std::string curve_csv(const RobustnessCurve& curve) {
  std::ostringstream out;
  out << "sigma,mean_acc,std_acc,repeats\n";
  for (std::size_t i = 0; i < curve.size(); ++i) {
    out << format_real(curve.sigmas[i]) << ',' << format_real(curve.mean_accuracy[i]) << ','
        << format_real(curve.std_accuracy[i]) << ',' << curve.repeats << '\n';
  }
  return out.str();
}

RobustnessCurve parse_curve_csv(std::string_view text, const std::string& origin) {
  const auto rows = parse_csv(text);
  expect_header(rows, {"sigma", "mean_acc", "std_acc", "repeats"}, origin);
  return parse_curve_rows(rows, origin, 4, nullptr);
}

std::string upper_bound_csv(const UpperBoundCurve& upper) {
  std::ostringstream out;
  out << "sigma,mean_acc,std_acc,repeats,provenance\n";
  const auto& c = upper.curve;
  for (std::size_t i = 0; i < c.size(); ++i) {
    out << format_real(c.sigmas[i]) << ',' << format_real(c.mean_accuracy[i]) << ',' << format_real(c.std_accuracy[i])
        << ',' << c.repeats << ',' << (i < upper.provenance.size() ? upper.provenance[i] : "") << '\n';
  }
  return out.str();
}

UpperBoundCurve parse_upper_bound_csv(std::string_view text, const std::string& origin) {
  const auto rows = parse_csv(text);
  UpperBoundCurve upper;
  // Provenance strings may themselves contain commas ("interp(a,b)"), so
  // rows are re-joined past the fourth field.
  std::vector<std::vector<std::string>> fixed;
  for (const auto& r : rows) {
    if (r.size() > 5) {
      std::vector<std::string> f(r.begin(), r.begin() + 4);
      std::string rest;
      for (std::size_t i = 4; i < r.size(); ++i) rest += (i > 4 ? "," : "") + r[i];
      f.push_back(rest);
      fixed.push_back(std::move(f));
    } else {
      fixed.push_back(r);
    }
  }
  expect_header(fixed, {"sigma", "mean_acc", "std_acc", "repeats", "provenance"}, origin);
  upper.curve = parse_curve_rows(fixed, origin, 5, &upper.provenance);
  return upper;
}

std::string scan_csv(const std::vector<ScanCell>& cells) {
  std::ostringstream out;
  out << "alpha,theta,rauc_percent,preserved_acc_pp,status\n";
  for (const auto& c : cells) {
    out << format_real(c.alpha) << ',' << format_real(c.theta) << ',';
    if (c.status == CellStatus::kOk) {
      out << format_real(c.rauc_percent) << ',' << format_real(c.preserved_acc_pp) << ",ok\n";
    } else {
      out << ",,failed\n";
    }
  }
  return out.str();
}

std::string metrics_summary_json(const MetricsSummary& summary) {
  ordered_json j;
  j["auc"] = summary.auc;
  j["rauc_percent"] = optional_number(summary.rauc_percent);
  j["preserved_accuracy_pp"] = optional_number(summary.preserved_accuracy_pp);
  j["sigma_train"] = optional_number(summary.sigma_train);
  return j.dump(2) + "\n";
}

std::string selection_json(const Selection& selection, double sigma_train, std::size_t failed_cells) {
  ordered_json j;
  j["sigma_train"] = sigma_train;
  j["alpha"] = selection.cell.alpha;
  j["theta"] = selection.cell.theta;
  j["rauc_percent"] = selection.cell.rauc_percent;
  j["preserved_acc_pp"] = selection.cell.preserved_acc_pp;
  j["checkpoint_id"] = selection.cell.checkpoint_id;
  j["relaxed"] = selection.relaxed;
  j["theta_heuristic"] = theta_heuristic(sigma_train);
  j["failed_cells"] = failed_cells;
  return j.dump(2) + "\n";
}

std::string plot_data_csv(const std::vector<std::pair<std::string, RobustnessCurve>>& series) {
  std::ostringstream out;
  out << "series,sigma,mean_acc,std_acc\n";
  for (const auto& [name, c] : series) {
    for (std::size_t i = 0; i < c.size(); ++i) {
      out << name << ',' << format_real(c.sigmas[i]) << ',' << format_real(c.mean_accuracy[i]) << ','
          << format_real(c.std_accuracy[i]) << '\n';
    }
  }
  return out.str();
}

std::string dataset_metadata_json(const Dataset& train, const Dataset& test) {
  ordered_json j;
  j["source"] = train.source;
  j["num_classes"] = train.num_classes;
  j["train_count"] = train.size();
  j["test_count"] = test.size();
  j["sample_shape"] = train.sample_shape();
  j["normalization"] = {{"scheme", "per-channel standardization, train-split statistics"},
                        {"mean", train.normalization.mean},
                        {"std", train.normalization.stddev}};
  j["source_hashes_crc32"] = train.source_hashes;
  j["test_source_hashes_crc32"] = test.source_hashes;
  return j.dump(2) + "\n";
}

}  // namespace noisyforge
