#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string_view>
#include <vector>

namespace poisoncert {

using Vector = Eigen::VectorXd;
/// One point per row; row-major because the solvers walk points one at a time.
using FeatureMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct LabeledPoint {
  Vector x;
  int y = 1;  // +1 or -1
};

/// An ordered set of labeled points sharing one dimension. Immutable once built.
class Dataset {
 public:
  Dataset() = default;
  /// Empty dataset of the given dimension.
  explicit Dataset(Eigen::Index dim, bool integer_features = false);
  /// Validates labels (exactly +-1), dimension, and integrality when flagged.
  Dataset(FeatureMatrix features, Eigen::VectorXd labels, bool integer_features = false);
  Dataset(const std::vector<LabeledPoint>& points, Eigen::Index dim, bool integer_features = false);

  Eigen::Index size() const { return features_.rows(); }
  Eigen::Index dim() const { return dim_; }
  bool empty() const { return size() == 0; }
  bool integer_features() const { return integer_features_; }

  const FeatureMatrix& features() const { return features_; }
  const Eigen::VectorXd& labels() const { return labels_; }
  Vector x(Eigen::Index i) const { return features_.row(i).transpose(); }
  int y(Eigen::Index i) const { return labels_[i] > 0 ? 1 : -1; }
  LabeledPoint point(Eigen::Index i) const { return {x(i), y(i)}; }

  Eigen::Index count(int label) const;
  /// Points of this dataset followed by those of `other`. The integer flag survives
  /// only if both sides carry it.
  Dataset concat(const Dataset& other) const;
  /// Rows selected by index, in the given order.
  Dataset subset(const std::vector<Eigen::Index>& rows) const;

 private:
  FeatureMatrix features_;
  Eigen::VectorXd labels_;
  Eigen::Index dim_ = 0;
  bool integer_features_ = false;
};

enum class DataFormat { kDenseCsv, kSparseText };

DataFormat parse_format(std::string_view name);
std::string_view format_name(DataFormat format);

Dataset read_dense_csv(std::istream& in);
Dataset read_sparse_text(std::istream& in);
void write_dense_csv(std::ostream& out, const Dataset& data);
void write_sparse_text(std::ostream& out, const Dataset& data);

Dataset load_dataset(const std::filesystem::path& path, DataFormat format);
/// Writes via a temporary file and rename so readers never see a partial file.
void save_dataset(const std::filesystem::path& path, const Dataset& data, DataFormat format);

/// Empirical per-class statistics.
struct ClassStats {
  Vector mu_plus;
  Vector mu_minus;
  double p_plus = 0.0;
  double p_minus = 0.0;
  double radius_bound = 0.0;  // max ||x||_2 over all points
  Eigen::Index n_plus = 0;
  Eigen::Index n_minus = 0;

  const Vector& mu(int y) const { return y > 0 ? mu_plus : mu_minus; }
  double p(int y) const { return y > 0 ? p_plus : p_minus; }
};

/// Throws StatsError unless both labels are present.
ClassStats class_stats(const Dataset& data);

struct GaussianSpec {
  Eigen::Index d = 2;
  double lambda = 2.0;
  Eigen::Index n = 1000;
  std::uint64_t seed = 0;
};

void validate(const GaussianSpec& spec);

/// Positives ~ N(lambda e1, I) first, then negatives ~ N(-lambda e1, I).
/// An odd n gives the extra point to the positive class.
Dataset generate_gaussian(const GaussianSpec& spec);

/// Mean-shift attack: ceil(eps n / 2) positives at -(sqrt(d) - lambda) e1 and as
/// many negatives at +(sqrt(d) - lambda) e1.
Dataset gaussian_attack_points(const GaussianSpec& spec, double eps);

}  // namespace poisoncert
