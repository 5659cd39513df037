#include "batchal/data.hpp"

#include <Eigen/QR>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <string_view>
#include <tuple>

#include <json.hpp>

#include "batchal/error.hpp"
#include "batchal/rng.hpp"

namespace batchal {

namespace {

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  for (;;) {
    const std::size_t comma = line.find(',', start);
    cells.push_back(line.substr(start, comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return cells;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::string where(const std::filesystem::path& path, std::size_t line) {
  return path.string() + ":" + std::to_string(line) + ": ";
}

double parse_cell(std::string_view cell, const std::filesystem::path& path, std::size_t line) {
  cell = trim(cell);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
  if (ec != std::errc() || ptr != cell.data() + cell.size() || cell.empty()) {
    throw Error(Errc::ParseError, where(path, line) + "not a number: '" + std::string(cell) + "'");
  }
  if (!std::isfinite(v)) {
    throw Error(Errc::NonFinite, where(path, line) + "non-finite value '" + std::string(cell) + "'");
  }
  return v;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::IoError, "cannot open " + path.string());
  return in;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::IoError, "cannot write " + path.string());
  return out;
}

}  // namespace

Nonlinearity parse_nonlinearity(const std::string& name) {
  if (name == "tanh") return Nonlinearity::Tanh;
  if (name == "identity") return Nonlinearity::Identity;
  throw Error(Errc::InvalidArgument, "unknown nonlinearity '" + name + "'");
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

FeatureTable load_features(const std::filesystem::path& path) {
  std::ifstream in = open_in(path);
  std::string line;
  if (!std::getline(in, line)) throw Error(Errc::ParseError, where(path, 1) + "empty file");
  const auto header = split_commas(trim(line));
  if (header.size() < 2 || trim(header[0]) != "id") {
    throw Error(Errc::ParseError, where(path, 1) + "header must be id,f0,f1,...");
  }
  const std::size_t d = header.size() - 1;
  for (std::size_t c = 0; c < d; ++c) {
    if (trim(header[c + 1]) != "f" + std::to_string(c)) {
      throw Error(Errc::ParseError, where(path, 1) + "expected column f" + std::to_string(c));
    }
  }

  std::vector<std::pair<long long, std::vector<double>>> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto cells = split_commas(trim(line));
    if (cells.size() != d + 1) {
      throw Error(Errc::ParseError, where(path, line_no) + "expected " + std::to_string(d + 1) +
                                        " columns, got " + std::to_string(cells.size()));
    }
    const std::string_view id_cell = trim(cells[0]);
    long long id = 0;
    const auto [ptr, ec] = std::from_chars(id_cell.data(), id_cell.data() + id_cell.size(), id);
    if (ec != std::errc() || ptr != id_cell.data() + id_cell.size()) {
      throw Error(Errc::ParseError, where(path, line_no) + "bad id '" + std::string(id_cell) + "'");
    }
    std::vector<double> values(d);
    for (std::size_t c = 0; c < d; ++c) values[c] = parse_cell(cells[c + 1], path, line_no);
    rows.emplace_back(id, std::move(values));
  }

  std::sort(rows.begin(), rows.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  FeatureTable table;
  table.rows.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(d));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].first != static_cast<long long>(r)) {
      throw Error(Errc::NonContiguousIds, path.string() + ": ids must be exactly 0.." +
                                              std::to_string(rows.size() == 0 ? 0 : rows.size() - 1) +
                                              " (missing or duplicate id near " +
                                              std::to_string(r) + ")");
    }
    for (std::size_t c = 0; c < d; ++c) {
      table.rows(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r].second[c];
    }
  }
  return table;
}

void save_features(const FeatureTable& table, const std::filesystem::path& path) {
  std::ofstream out = open_out(path);
  out << "id";
  for (std::size_t c = 0; c < table.d(); ++c) out << ",f" << c;
  out << '\n';
  for (Eigen::Index r = 0; r < table.rows.rows(); ++r) {
    out << r;
    for (Eigen::Index c = 0; c < table.rows.cols(); ++c) out << ',' << format_double(table.rows(r, c));
    out << '\n';
  }
  if (!out) throw Error(Errc::IoError, "write failed: " + path.string());
}

void validate_dissim(const DissimMatrix& m) {
  const Eigen::Index n = m.values.rows();
  if (m.values.cols() != n) throw Error(Errc::DimensionMismatch, "dissimilarity matrix must be square");
  for (Eigen::Index i = 0; i < n; ++i) {
    if (m.values(i, i) != 0.0) {
      throw Error(Errc::InvalidArgument, "dissimilarity diagonal must be zero (row " +
                                             std::to_string(i) + ")");
    }
    for (Eigen::Index j = 0; j < n; ++j) {
      const double v = m.values(i, j);
      if (!std::isfinite(v)) throw Error(Errc::NonFinite, "non-finite dissimilarity");
      if (v < 0.0) throw Error(Errc::InvalidArgument, "negative dissimilarity");
      if (std::abs(v - m.values(j, i)) > 1e-9) {
        throw Error(Errc::NotSymmetric, "dissimilarity matrix not symmetric at (" +
                                            std::to_string(i) + "," + std::to_string(j) + ")");
      }
    }
  }
}

DissimMatrix load_dissim(const std::filesystem::path& path) {
  std::ifstream in = open_in(path);
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    std::vector<double> row;
    for (std::string_view cell : split_commas(trim(line))) row.push_back(parse_cell(cell, path, line_no));
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw Error(Errc::ParseError, where(path, line_no) + "ragged row");
    }
    rows.push_back(std::move(row));
  }
  DissimMatrix m;
  const auto n = static_cast<Eigen::Index>(rows.size());
  if (n > 0 && static_cast<Eigen::Index>(rows.front().size()) != n) {
    throw Error(Errc::ParseError, path.string() + ": matrix is not square");
  }
  m.values.resize(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) m.values(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
  }
  validate_dissim(m);
  return m;
}

void save_dissim(const DissimMatrix& m, const std::filesystem::path& path) {
  std::ofstream out = open_out(path);
  for (Eigen::Index i = 0; i < m.values.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.values.cols(); ++j) {
      if (j) out << ',';
      out << format_double(m.values(i, j));
    }
    out << '\n';
  }
  if (!out) throw Error(Errc::IoError, "write failed: " + path.string());
}

std::vector<Triplet> load_triplets(const std::filesystem::path& path) {
  std::ifstream in = open_in(path);
  std::vector<Triplet> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      Triplet t{j.at("i").get<ObjectId>(), j.at("j").get<ObjectId>(), j.at("k").get<ObjectId>()};
      if (t.i == t.j || t.i == t.k || t.j == t.k) {
        throw Error(Errc::ParseError, where(path, line_no) + "triplet indices must be distinct");
      }
      out.push_back(t);
    } catch (const nlohmann::json::exception& e) {
      throw Error(Errc::ParseError, where(path, line_no) + e.what());
    }
  }
  return out;
}

void save_triplets(std::span<const Triplet> triplets, const std::filesystem::path& path) {
  std::ofstream out = open_out(path);
  for (const Triplet& t : triplets) {
    out << "{\"i\":" << t.i << ",\"j\":" << t.j << ",\"k\":" << t.k << "}\n";
  }
  if (!out) throw Error(Errc::IoError, "write failed: " + path.string());
}

double default_min_gap(const DissimMatrix& gt) {
  std::vector<double> off;
  const Eigen::Index n = gt.values.rows();
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) off.push_back(gt.values(i, j));
  }
  if (off.empty()) return 0.0;
  auto mid = off.begin() + static_cast<std::ptrdiff_t>(off.size() / 2);
  std::nth_element(off.begin(), mid, off.end());
  return 1e-6 * *mid;
}

std::vector<Triplet> triplets_from_matrix(const DissimMatrix& gt, std::size_t count,
                                          std::uint64_t seed, double min_gap) {
  if (count == 0) throw Error(Errc::InvalidArgument, "triplets_from_matrix: count must be >= 1");
  const std::size_t n = gt.n();
  if (n < 3) throw Error(Errc::ExhaustedSampling, "need at least three objects");
  Rng rng(seed);
  std::set<std::tuple<ObjectId, ObjectId, ObjectId>> seen;
  std::vector<Triplet> out;
  out.reserve(count);
  const std::size_t max_attempts = 100 * count;
  for (std::size_t attempt = 0; attempt < max_attempts && out.size() < count; ++attempt) {
    const auto i = static_cast<ObjectId>(rng.below(n));
    const auto j = static_cast<ObjectId>(rng.below(n));
    const auto k = static_cast<ObjectId>(rng.below(n));
    if (i == j || i == k || j == k) continue;
    const double dij = gt.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    const double dik = gt.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k));
    if (!(std::abs(dij - dik) >= min_gap) || dij == dik) continue;
    if (!seen.emplace(i, std::min(j, k), std::max(j, k)).second) continue;
    out.push_back(dij < dik ? Triplet{i, j, k} : Triplet{i, k, j});
  }
  if (out.size() < count) {
    throw Error(Errc::ExhaustedSampling, "triplets_from_matrix: produced " +
                                             std::to_string(out.size()) + " of " +
                                             std::to_string(count) + " triplets in " +
                                             std::to_string(max_attempts) + " attempts");
  }
  return out;
}

namespace {

// d x c matrix with orthonormal columns from the QR factor of a Gaussian draw,
// signs fixed so the diagonal of R is positive.
Matrix random_orthonormal(Rng& rng, Eigen::Index d, Eigen::Index c) {
  Matrix g(d, c);
  for (Eigen::Index col = 0; col < c; ++col) {
    for (Eigen::Index r = 0; r < d; ++r) g(r, col) = rng.normal();
  }
  Eigen::HouseholderQR<Matrix> qr(g);
  Matrix q = qr.householderQ() * Matrix::Identity(d, c);
  const Matrix r = qr.matrixQR().topRows(c).triangularView<Eigen::Upper>();
  for (Eigen::Index col = 0; col < c; ++col) {
    if (r(col, col) < 0.0) q.col(col) = -q.col(col);
  }
  return q;
}

}  // namespace

SyntheticDataset generate_synthetic(const SyntheticSpec& spec) {
  if (spec.n < 3 || spec.d == 0 || spec.latent_dim == 0) {
    throw Error(Errc::InvalidArgument, "synthetic spec needs n >= 3, d >= 1, L >= 1");
  }
  if (spec.latent_dim > spec.d) {
    throw Error(Errc::InvalidArgument, "latent dimension must not exceed feature dimension");
  }
  if (!(spec.noise >= 0.0)) throw Error(Errc::InvalidArgument, "noise scale must be >= 0");
  if (spec.nonlinearity == Nonlinearity::Identity && spec.latent_dim != spec.d) {
    throw Error(Errc::InvalidArgument, "identity maps need latent dimension == d");
  }
  const auto n = static_cast<Eigen::Index>(spec.n);
  const auto d = static_cast<Eigen::Index>(spec.d);
  const auto l = static_cast<Eigen::Index>(spec.latent_dim);
  Rng rng(spec.seed);

  Matrix z(n, l);
  for (Eigen::Index r = 0; r < n; ++r) {
    for (Eigen::Index c = 0; c < l; ++c) z(r, c) = rng.normal();
  }

  SyntheticDataset out;
  if (spec.nonlinearity == Nonlinearity::Identity) {
    out.features.rows = z;
  } else {
    // W: orthonormal columns scaled by sqrt(d / L). A: orthogonal.
    const Matrix w = std::sqrt(static_cast<double>(d) / static_cast<double>(l)) *
                     random_orthonormal(rng, d, l);
    const Matrix a = random_orthonormal(rng, d, d);
    const Matrix hidden = (z * w.transpose()).array().tanh().matrix();
    out.features.rows = hidden * a.transpose();
  }
  if (spec.noise > 0.0) {
    for (Eigen::Index r = 0; r < n; ++r) {
      for (Eigen::Index c = 0; c < d; ++c) out.features.rows(r, c) += spec.noise * rng.normal();
    }
  }

  out.dissim.values = Matrix::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double dist = (z.row(i) - z.row(j)).norm();
      out.dissim.values(i, j) = out.dissim.values(j, i) = dist;
    }
  }
  return out;
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(
    std::size_t count, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw Error(Errc::InvalidArgument, "train fraction must lie in (0, 1)");
  }
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(std::span<std::size_t>(order));
  const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(count)));
  std::vector<std::size_t> train(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  std::vector<std::size_t> test(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
  std::sort(train.begin(), train.end());
  std::sort(test.begin(), test.end());
  return {std::move(train), std::move(test)};
}

TripletSplit split_triplets(std::span<const Triplet> triplets, double train_fraction,
                            std::uint64_t seed) {
  const auto [train_idx, test_idx] = split_indices(triplets.size(), train_fraction, seed);
  TripletSplit out;
  for (std::size_t i : train_idx) out.train.push_back(triplets[i]);
  for (std::size_t i : test_idx) out.test.push_back(triplets[i]);
  return out;
}

}  // namespace batchal
