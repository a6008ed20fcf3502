#include "poisoncert/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>

#include "poisoncert/errors.hpp"
#include "poisoncert/rng.hpp"

namespace poisoncert {
namespace {

bool is_nonneg_integer(double v) { return v >= 0.0 && std::floor(v) == v && std::isfinite(v); }

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

double parse_double(std::string_view token, std::size_t line) {
  token = trim(token);
  if (!token.empty() && token.front() == '+') token.remove_prefix(1);
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), value);
  if (token.empty() || ec != std::errc() || ptr != token.data() + token.size()) {
    throw ParseError(line, "invalid number '" + std::string(token) + "'");
  }
  if (!std::isfinite(value)) throw ParseError(line, "non-finite value");
  return value;
}

int parse_label(std::string_view token, std::size_t line) {
  const double v = parse_double(token, line);
  if (v == 1.0) return 1;
  if (v == -1.0) return -1;
  throw ParseError(line, "label must be -1 or 1, got '" + std::string(trim(token)) + "'");
}

void write_number(std::ostream& out, double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  out.write(buf, ptr - buf);
}

}  // namespace

Dataset::Dataset(Eigen::Index dim, bool integer_features)
    : features_(0, dim), labels_(0), dim_(dim), integer_features_(integer_features) {
  if (dim <= 0) throw DimensionError("dataset dimension must be positive");
}

Dataset::Dataset(FeatureMatrix features, Eigen::VectorXd labels, bool integer_features)
    : features_(std::move(features)),
      labels_(std::move(labels)),
      dim_(features_.cols()),
      integer_features_(integer_features) {
  if (dim_ <= 0) throw DimensionError("dataset dimension must be positive");
  if (labels_.size() != features_.rows()) {
    throw DimensionError("label count does not match number of rows");
  }
  for (Eigen::Index i = 0; i < labels_.size(); ++i) {
    if (labels_[i] != 1.0 && labels_[i] != -1.0) throw Error("label must be exactly +1 or -1");
  }
  if (!features_.allFinite()) throw Error("features must be finite");
  if (integer_features_) {
    for (Eigen::Index i = 0; i < features_.size(); ++i) {
      if (!is_nonneg_integer(features_.data()[i])) {
        throw Error("integer-feature dataset has a non-integer or negative coordinate");
      }
    }
  }
}

Dataset::Dataset(const std::vector<LabeledPoint>& points, Eigen::Index dim, bool integer_features) {
  FeatureMatrix f(static_cast<Eigen::Index>(points.size()), dim);
  Eigen::VectorXd l(static_cast<Eigen::Index>(points.size()));
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (points[i].x.size() != dim) throw DimensionError("point dimension mismatch");
    f.row(static_cast<Eigen::Index>(i)) = points[i].x.transpose();
    l[static_cast<Eigen::Index>(i)] = points[i].y;
  }
  *this = Dataset(std::move(f), std::move(l), integer_features);
}

Eigen::Index Dataset::count(int label) const {
  return (labels_.array() == static_cast<double>(label)).count();
}

Dataset Dataset::concat(const Dataset& other) const {
  if (other.dim() != dim_) throw DimensionError("cannot concatenate datasets of different dimension");
  FeatureMatrix f(size() + other.size(), dim_);
  f.topRows(size()) = features_;
  f.bottomRows(other.size()) = other.features_;
  Eigen::VectorXd l(size() + other.size());
  l.head(size()) = labels_;
  l.tail(other.size()) = other.labels_;
  Dataset out;
  out.features_ = std::move(f);
  out.labels_ = std::move(l);
  out.dim_ = dim_;
  out.integer_features_ = integer_features_ && other.integer_features_;
  return out;
}

Dataset Dataset::subset(const std::vector<Eigen::Index>& rows) const {
  Dataset out(dim_, integer_features_);
  out.features_.resize(static_cast<Eigen::Index>(rows.size()), dim_);
  out.labels_.resize(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t k = 0; k < rows.size(); ++k) {
    out.features_.row(static_cast<Eigen::Index>(k)) = features_.row(rows[k]);
    out.labels_[static_cast<Eigen::Index>(k)] = labels_[rows[k]];
  }
  return out;
}

DataFormat parse_format(std::string_view name) {
  if (name == "dense-csv") return DataFormat::kDenseCsv;
  if (name == "sparse-text") return DataFormat::kSparseText;
  throw ConfigError("unknown data format '" + std::string(name) + "'");
}

std::string_view format_name(DataFormat format) {
  return format == DataFormat::kDenseCsv ? "dense-csv" : "sparse-text";
}

Dataset read_dense_csv(std::istream& in) {
  std::vector<double> values;
  std::vector<double> labels;
  Eigen::Index dim = -1;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string_view row = trim(line);
    if (row.empty()) continue;
    std::size_t start = 0;
    Eigen::Index fields = 0;
    while (true) {
      const std::size_t comma = row.find(',', start);
      const std::string_view token =
          row.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start);
      if (fields == 0) {
        labels.push_back(parse_label(token, line_no));
      } else {
        values.push_back(parse_double(token, line_no));
      }
      ++fields;
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
    const Eigen::Index row_dim = fields - 1;
    if (row_dim <= 0) throw ParseError(line_no, "row has no features");
    if (dim < 0) dim = row_dim;
    if (row_dim != dim) {
      throw ParseError(line_no, "expected " + std::to_string(dim) + " features, got " +
                                    std::to_string(row_dim));
    }
  }
  if (dim < 0) throw ParseError(line_no, "no data rows");
  const auto n = static_cast<Eigen::Index>(labels.size());
  FeatureMatrix f = Eigen::Map<FeatureMatrix>(values.data(), n, dim);
  return Dataset(std::move(f), Eigen::Map<Eigen::VectorXd>(labels.data(), n), false);
}

Dataset read_sparse_text(std::istream& in) {
  std::string line;
  std::size_t line_no = 0;
  Eigen::Index dim = -1;
  std::vector<std::vector<std::pair<Eigen::Index, double>>> rows;
  std::vector<double> labels;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string_view row = trim(line);
    if (row.empty()) continue;
    if (dim < 0) {
      if (row.rfind("#d=", 0) != 0) throw ParseError(line_no, "missing '#d=<int>' header");
      const double d = parse_double(row.substr(3), line_no);
      if (d < 1 || std::floor(d) != d) throw ParseError(line_no, "dimension must be a positive integer");
      dim = static_cast<Eigen::Index>(d);
      continue;
    }
    std::istringstream tokens{std::string(row)};
    std::string token;
    tokens >> token;
    labels.push_back(parse_label(token, line_no));
    auto& entries = rows.emplace_back();
    while (tokens >> token) {
      const auto colon = token.find(':');
      if (colon == std::string::npos) throw ParseError(line_no, "expected idx:val, got '" + token + "'");
      const double idx = parse_double(std::string_view(token).substr(0, colon), line_no);
      const double val = parse_double(std::string_view(token).substr(colon + 1), line_no);
      if (idx < 0 || std::floor(idx) != idx || idx >= static_cast<double>(dim)) {
        throw ParseError(line_no, "index out of range in '" + token + "'");
      }
      if (!is_nonneg_integer(val)) throw ParseError(line_no, "count must be a non-negative integer");
      entries.emplace_back(static_cast<Eigen::Index>(idx), val);
    }
  }
  if (dim < 0) throw ParseError(line_no, "missing '#d=<int>' header");
  FeatureMatrix f = FeatureMatrix::Zero(static_cast<Eigen::Index>(rows.size()), dim);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (const auto& [j, v] : rows[i]) f(static_cast<Eigen::Index>(i), j) = v;
  }
  return Dataset(std::move(f), Eigen::Map<Eigen::VectorXd>(labels.data(), static_cast<Eigen::Index>(labels.size())),
                 true);
}

void write_dense_csv(std::ostream& out, const Dataset& data) {
  for (Eigen::Index i = 0; i < data.size(); ++i) {
    out << data.y(i);
    for (Eigen::Index j = 0; j < data.dim(); ++j) {
      out << ',';
      write_number(out, data.features()(i, j));
    }
    out << '\n';
  }
}

void write_sparse_text(std::ostream& out, const Dataset& data) {
  out << "#d=" << data.dim() << '\n';
  for (Eigen::Index i = 0; i < data.size(); ++i) {
    out << data.y(i);
    for (Eigen::Index j = 0; j < data.dim(); ++j) {
      const double v = data.features()(i, j);
      if (v == 0.0) continue;
      if (!is_nonneg_integer(v)) throw Error("sparse-text requires non-negative integer features");
      out << ' ' << j << ':';
      write_number(out, v);
    }
    out << '\n';
  }
}

Dataset load_dataset(const std::filesystem::path& path, DataFormat format) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  return format == DataFormat::kDenseCsv ? read_dense_csv(in) : read_sparse_text(in);
}

void save_dataset(const std::filesystem::path& path, const Dataset& data, DataFormat format) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + path.string());
    if (format == DataFormat::kDenseCsv) {
      write_dense_csv(out, data);
    } else {
      write_sparse_text(out, data);
    }
    if (!out) throw Error("write failed for " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

ClassStats class_stats(const Dataset& data) {
  ClassStats s;
  s.n_plus = data.count(1);
  s.n_minus = data.count(-1);
  if (s.n_plus == 0 || s.n_minus == 0) throw StatsError("class statistics need both labels present");
  s.mu_plus = Vector::Zero(data.dim());
  s.mu_minus = Vector::Zero(data.dim());
  for (Eigen::Index i = 0; i < data.size(); ++i) {
    if (data.y(i) > 0) {
      s.mu_plus += data.features().row(i).transpose();
    } else {
      s.mu_minus += data.features().row(i).transpose();
    }
    s.radius_bound = std::max(s.radius_bound, data.features().row(i).norm());
  }
  s.mu_plus /= static_cast<double>(s.n_plus);
  s.mu_minus /= static_cast<double>(s.n_minus);
  s.p_plus = static_cast<double>(s.n_plus) / static_cast<double>(data.size());
  s.p_minus = 1.0 - s.p_plus;
  return s;
}

void validate(const GaussianSpec& spec) {
  if (spec.d < 1) throw ConfigError("gaussian d must be >= 1");
  if (!(spec.lambda > 0.0)) throw ConfigError("gaussian lambda must be > 0");
  if (spec.n < 2) throw ConfigError("gaussian n must be >= 2 (both classes needed)");
}

Dataset generate_gaussian(const GaussianSpec& spec) {
  validate(spec);
  Rng rng(spec.seed);
  const Eigen::Index n_plus = (spec.n + 1) / 2;
  FeatureMatrix f(spec.n, spec.d);
  Eigen::VectorXd labels(spec.n);
  for (Eigen::Index i = 0; i < spec.n; ++i) {
    const int y = i < n_plus ? 1 : -1;
    for (Eigen::Index j = 0; j < spec.d; ++j) f(i, j) = rng.normal();
    f(i, 0) += y * spec.lambda;
    labels[i] = y;
  }
  return Dataset(std::move(f), std::move(labels));
}

Dataset gaussian_attack_points(const GaussianSpec& spec, double eps) {
  validate(spec);
  if (!(eps > 0.0 && eps <= 1.0)) throw ConfigError("eps must lie in (0, 1]");
  const auto per_class =
      static_cast<Eigen::Index>(std::ceil(eps * static_cast<double>(spec.n) / 2.0 - 1e-9));
  const double shift = std::sqrt(static_cast<double>(spec.d)) - spec.lambda;
  FeatureMatrix f = FeatureMatrix::Zero(2 * per_class, spec.d);
  Eigen::VectorXd labels(2 * per_class);
  for (Eigen::Index i = 0; i < per_class; ++i) {
    f(i, 0) = -shift;
    labels[i] = 1;
    f(per_class + i, 0) = shift;
    labels[per_class + i] = -1;
  }
  return Dataset(std::move(f), std::move(labels));
}

}  // namespace poisoncert
