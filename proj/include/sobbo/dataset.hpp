#pragma once

#include <cstdio>
#include <fstream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "sobbo/errors.hpp"
#include "sobbo/tensor.hpp"

namespace sobbo {

/// Formats a double with full round-trip precision; output is
/// locale-independent and stable, so emitted files are byte-reproducible.
inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

/// The historical triples {theta_k, x_k, y_k}; the sole training input.
struct OfflineDataset {
  std::size_t d_theta = 0;
  std::size_t d_x = 0;
  std::vector<double> thetas;  // n x d_theta, row-major
  std::vector<double> xs;      // n x d_x, row-major
  std::vector<double> ys;      // n
  nlohmann::json provenance;   // problem, seed, s3nr, n, scaling constants

  std::size_t size() const { return ys.size(); }
  std::size_t zeta_dim() const { return d_theta + d_x; }

  std::span<const double> theta_row(std::size_t k) const {
    return {thetas.data() + k * d_theta, d_theta};
  }
  std::span<const double> x_row(std::size_t k) const { return {xs.data() + k * d_x, d_x}; }

  /// zeta_k = (theta_k, x_k).
  std::vector<double> zeta_row(std::size_t k) const {
    std::vector<double> z;
    z.reserve(zeta_dim());
    auto t = theta_row(k);
    auto x = x_row(k);
    z.insert(z.end(), t.begin(), t.end());
    z.insert(z.end(), x.begin(), x.end());
    return z;
  }

  /// Rows [B x (d_theta + d_x)] for the given record indices.
  Tensor zeta_batch(std::span<const std::size_t> idx) const {
    Tensor out = Tensor::zeros({idx.size(), zeta_dim()});
    for (std::size_t r = 0; r < idx.size(); ++r) {
      const auto z = zeta_row(idx[r]);
      std::copy(z.begin(), z.end(), out.data.begin() + r * zeta_dim());
    }
    return out;
  }

  std::vector<double> y_batch(std::span<const std::size_t> idx) const {
    std::vector<double> out(idx.size());
    for (std::size_t r = 0; r < idx.size(); ++r) out[r] = ys[idx[r]];
    return out;
  }
};

inline std::string dataset_csv_header(std::size_t d_theta, std::size_t d_x) {
  std::string h;
  for (std::size_t i = 0; i < d_theta; ++i) h += "theta_" + std::to_string(i) + ",";
  for (std::size_t i = 0; i < d_x; ++i) h += "x_" + std::to_string(i) + ",";
  h += "y";
  return h;
}

inline void save_dataset_csv(const std::string& path, const OfflineDataset& ds) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw config_error("dataset: cannot open for write: " + path);
  f << dataset_csv_header(ds.d_theta, ds.d_x) << "\n";
  for (std::size_t k = 0; k < ds.size(); ++k) {
    for (std::size_t i = 0; i < ds.d_theta; ++i) f << format_double(ds.thetas[k * ds.d_theta + i]) << ",";
    for (std::size_t i = 0; i < ds.d_x; ++i) f << format_double(ds.xs[k * ds.d_x + i]) << ",";
    f << format_double(ds.ys[k]) << "\n";
  }
}

inline void save_dataset_sidecar(const std::string& path, const OfflineDataset& ds) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw config_error("dataset: cannot open for write: " + path);
  f << ds.provenance.dump(2) << "\n";
}

inline OfflineDataset load_dataset_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw config_error("dataset: cannot open: " + path);
  std::string line;
  if (!std::getline(f, line)) throw config_error("dataset: empty file: " + path);

  OfflineDataset ds;
  {
    std::stringstream ss(line);
    std::string col;
    while (std::getline(ss, col, ',')) {
      if (col.rfind("theta_", 0) == 0)
        ++ds.d_theta;
      else if (col.rfind("x_", 0) == 0)
        ++ds.d_x;
      else if (col != "y")
        throw config_error("dataset: unexpected column '" + col + "' in " + path);
    }
  }
  if (ds.d_theta == 0 || ds.d_x == 0) throw config_error("dataset: bad header in " + path);

  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<double> row;
    while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
    if (row.size() != ds.d_theta + ds.d_x + 1)
      throw config_error("dataset: bad row width in " + path);
    for (std::size_t i = 0; i < ds.d_theta; ++i) ds.thetas.push_back(row[i]);
    for (std::size_t i = 0; i < ds.d_x; ++i) ds.xs.push_back(row[ds.d_theta + i]);
    ds.ys.push_back(row.back());
  }

  const std::string sidecar = path.size() > 4 ? path.substr(0, path.size() - 4) + ".json" : "";
  if (!sidecar.empty()) {
    std::ifstream sf(sidecar);
    if (sf) ds.provenance = nlohmann::json::parse(sf);
  }
  return ds;
}

}  // namespace sobbo
