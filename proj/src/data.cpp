// SPDX-License-Identifier: Apache-2.0
#include "sattn/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "sattn/error.hpp"

namespace sattn {
namespace {

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

std::string trim(std::string s) {
  const auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

bool parse_double(const std::string& text, double& out) {
  const char* first = text.data();
  const char* last = text.data() + text.size();
  if (first != last && *first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last && std::isfinite(out);
}

std::vector<InputCase> pick(const std::vector<InputCase>& cases, const std::vector<std::size_t>& order,
                            std::size_t begin, std::size_t end) {
  std::vector<InputCase> out;
  out.reserve(end - begin);
  for (std::size_t i = begin; i < end; ++i) out.push_back(cases[order[i]]);
  return out;
}

}  // namespace

Dataset make_sinusoid(const SinusoidSpec& spec) {
  if (spec.n == 0 || !(spec.x_lo < spec.x_hi)) {
    throw Error(ErrorCode::InvalidRange, "sinusoid needs n >= 1 and x_lo < x_hi");
  }
  if (!(spec.noise_sigma >= 0.0)) throw Error(ErrorCode::InvalidRange, "noise_sigma must be nonnegative");
  RandomStream rng = make_stream(spec.seed, {stream_tag::kData});
  std::uniform_real_distribution<double> uniform(spec.x_lo, spec.x_hi);
  std::normal_distribution<double> noise(0.0, 1.0);
  Dataset ds;
  ds.name = "sinusoid";
  ds.noise_sigma = spec.noise_sigma;
  ds.cases.reserve(spec.n);
  for (std::size_t i = 0; i < spec.n; ++i) {
    const double x = uniform(rng);
    const double eps = noise(rng);
    InputCase c;
    c.features = Eigen::VectorXd::Constant(1, x);
    c.target = spec.amplitude * std::sin(spec.frequency * x) + spec.noise_sigma * eps;
    ds.cases.push_back(std::move(c));
  }
  return ds;
}

Dataset load_csv(const std::filesystem::path& path, const std::string& target_column,
                 const std::vector<std::string>& feature_columns, bool standardize) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::ParseError, "missing header row in " + path.string());
  if (!line.empty() && line.back() == '\r') line.pop_back();
  std::vector<std::string> header = split_fields(line);
  for (auto& h : header) h = trim(h);

  auto column_index = [&](const std::string& name) {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw Error(ErrorCode::MissingColumn, "column '" + name + "' not in " + path.string());
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t target_idx = column_index(target_column);
  std::vector<std::size_t> feature_idx;
  if (feature_columns.empty()) {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (i != target_idx) feature_idx.push_back(i);
  } else {
    for (const auto& name : feature_columns) feature_idx.push_back(column_index(name));
  }
  if (feature_idx.empty()) throw Error(ErrorCode::MissingColumn, "no feature columns selected");

  Dataset ds;
  ds.name = path.stem().string();
  ds.standardize = standardize;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    ++row;
    const std::vector<std::string> fields = split_fields(line);
    auto cell = [&](std::size_t col) {
      if (col >= fields.size()) throw ParseError(row, header[col], "missing cell");
      double v = 0.0;
      if (!parse_double(trim(fields[col]), v)) throw ParseError(row, header[col], "non-numeric cell '" + fields[col] + "'");
      return v;
    };
    InputCase c;
    c.features.resize(static_cast<Eigen::Index>(feature_idx.size()));
    for (std::size_t f = 0; f < feature_idx.size(); ++f) c.features[static_cast<Eigen::Index>(f)] = cell(feature_idx[f]);
    c.target = cell(target_idx);
    ds.cases.push_back(std::move(c));
  }
  if (ds.cases.empty()) throw Error(ErrorCode::Empty, "no data rows in " + path.string());
  return ds;
}

void SplitSpec::validate() const {
  for (double f : {train_frac, cal_frac, test_frac}) {
    if (!(f > 0.0 && f < 1.0)) throw Error(ErrorCode::InvalidConfig, "split fractions must lie in (0, 1)");
  }
  if (std::abs(train_frac + cal_frac + test_frac - 1.0) > 1e-12) {
    throw Error(ErrorCode::InvalidConfig, "split fractions must sum to 1");
  }
}

DataSplits split(const Dataset& dataset, const SplitSpec& spec) {
  spec.validate();
  const std::size_t n = dataset.cases.size();
  // The epsilon absorbs representation error such as 0.29 * 100 = 28.999...
  const auto n_train = static_cast<std::size_t>(std::floor(spec.train_frac * static_cast<double>(n) + 1e-9));
  const auto n_cal = static_cast<std::size_t>(std::floor(spec.cal_frac * static_cast<double>(n) + 1e-9));
  if (n_train == 0 || n_cal == 0 || n_train + n_cal >= n) {
    throw Error(ErrorCode::EmptySplit, "dataset of " + std::to_string(n) + " cases leaves an empty split");
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  RandomStream rng = make_stream(spec.seed, {stream_tag::kSplit});
  // Fisher-Yates with our own index draws so the permutation is identical
  // across standard library implementations.
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(order[i - 1], order[j]);
  }

  DataSplits out;
  for (Dataset* part : {&out.train, &out.cal, &out.test}) {
    part->name = dataset.name;
    part->noise_sigma = dataset.noise_sigma;
    part->standardize = dataset.standardize;
  }
  out.train.cases = pick(dataset.cases, order, 0, n_train);
  out.cal.cases = pick(dataset.cases, order, n_train, n_train + n_cal);
  out.test.cases = pick(dataset.cases, order, n_train + n_cal, n);

  if (dataset.standardize) {
    const Eigen::Index d = out.train.cases.front().features.size();
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(d);
    for (const auto& c : out.train.cases) mean += c.features;
    mean /= static_cast<double>(out.train.cases.size());
    Eigen::VectorXd var = Eigen::VectorXd::Zero(d);
    for (const auto& c : out.train.cases) var += (c.features - mean).array().square().matrix();
    var /= static_cast<double>(out.train.cases.size());
    Eigen::VectorXd stddev = var.array().sqrt();
    for (Eigen::Index k = 0; k < d; ++k)
      if (stddev[k] == 0.0) stddev[k] = 1.0;
    for (Dataset* part : {&out.train, &out.cal, &out.test}) {
      for (auto& c : part->cases) c.features = ((c.features - mean).array() / stddev.array()).matrix();
    }
  }
  return out;
}

}  // namespace sattn
