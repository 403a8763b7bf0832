/*
 * Copyright 2026 The StarPrompt Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#include "starprompt/gmm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "starprompt/binary_io.hpp"
#include "starprompt/errors.hpp"

namespace starprompt {

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;
constexpr double kEmptyComponent = 1e-10;

/// Lower-triangular Cholesky factor of a dim x dim row-major matrix.
std::vector<double> cholesky(const std::vector<double>& a, std::size_t dim) {
  std::vector<double> l(dim * dim, 0.0);
  for (std::size_t i = 0; i < dim; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      double s = a[i * dim + j];
      for (std::size_t k = 0; k < j; ++k) s -= l[i * dim + k] * l[j * dim + k];
      if (i == j) {
        if (!(s > 0.0)) throw StateError("Mog: covariance is not positive definite");
        l[i * dim + i] = std::sqrt(s);
      } else {
        l[i * dim + j] = s / l[j * dim + j];
      }
    }
  }
  return l;
}

/// Precomputed per-component terms for density evaluation.
struct ComponentCache {
  double log_weight = 0.0;
  double log_norm = 0.0;             // -0.5 * (dim*log(2pi) + log|Sigma|)
  std::vector<double> inv_var;       // diagonal
  std::vector<double> chol;          // full
};

std::vector<ComponentCache> prepare(const Mog& mog) {
  const std::size_t dim = mog.dim();
  std::vector<ComponentCache> out(mog.components());
  for (std::size_t m = 0; m < mog.components(); ++m) {
    ComponentCache& c = out[m];
    c.log_weight = mog.weights[m] > 0.0 ? std::log(mog.weights[m]) : -std::numeric_limits<double>::infinity();
    double log_det = 0.0;
    if (mog.type == CovarianceType::diagonal) {
      c.inv_var.resize(dim);
      for (std::size_t d = 0; d < dim; ++d) {
        c.inv_var[d] = 1.0 / mog.covariances[m][d];
        log_det += std::log(mog.covariances[m][d]);
      }
    } else {
      c.chol = cholesky(mog.covariances[m], dim);
      for (std::size_t d = 0; d < dim; ++d) log_det += 2.0 * std::log(c.chol[d * dim + d]);
    }
    c.log_norm = -0.5 * (static_cast<double>(dim) * kLog2Pi + log_det);
  }
  return out;
}

double component_log_density(const Mog& mog, const ComponentCache& cache, std::size_t m,
                             std::span<const double> x) {
  const std::size_t dim = x.size();
  const std::vector<double>& mu = mog.means[m];
  double maha = 0.0;
  if (mog.type == CovarianceType::diagonal) {
    for (std::size_t d = 0; d < dim; ++d) {
      const double diff = x[d] - mu[d];
      maha += diff * diff * cache.inv_var[d];
    }
  } else {
    // Solve L y = (x - mu); maha = |y|^2.
    std::vector<double> y(dim);
    for (std::size_t i = 0; i < dim; ++i) {
      double s = x[i] - mu[i];
      for (std::size_t k = 0; k < i; ++k) s -= cache.chol[i * dim + k] * y[k];
      y[i] = s / cache.chol[i * dim + i];
      maha += y[i] * y[i];
    }
  }
  return cache.log_norm - 0.5 * maha;
}

double log_sum_exp(std::span<const double> v) {
  const double mx = *std::max_element(v.begin(), v.end());
  if (!std::isfinite(mx)) return mx;
  double s = 0.0;
  for (double x : v) s += std::exp(x - mx);
  return mx + std::log(s);
}

/// Fills resp (n x M) with log(phi_m) + log N(x_i | m) and returns per-sample log-likelihoods.
std::vector<double> joint_log_terms(const Mog& mog, const Tensor& samples, std::vector<double>& resp) {
  const std::size_t n = samples.rows();
  const std::size_t mcount = mog.components();
  const auto caches = prepare(mog);
  resp.assign(n * mcount, 0.0);
  std::vector<double> ll(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto x = samples.row_span(i);
    for (std::size_t m = 0; m < mcount; ++m) {
      resp[i * mcount + m] = caches[m].log_weight + component_log_density(mog, caches[m], m, x);
    }
    ll[i] = log_sum_exp(std::span<const double>(resp).subspan(i * mcount, mcount));
  }
  return ll;
}

double sum_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s;
}

}  // namespace

void Mog::validate() const {
  const std::size_t m = weights.size();
  if (m == 0) throw StateError("Mog: no components");
  if (means.size() != m || covariances.size() != m) throw StateError("Mog: component arrays disagree in length");
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0)) throw StateError("Mog: negative or NaN component weight");
    total += w;
  }
  if (std::fabs(total - 1.0) > 1e-8) throw StateError("Mog: weights sum to " + std::to_string(total));
  const std::size_t d = dim();
  for (std::size_t k = 0; k < m; ++k) {
    if (means[k].size() != d) throw StateError("Mog: ragged means");
    if (type == CovarianceType::diagonal) {
      if (covariances[k].size() != d) throw StateError("Mog: diagonal covariance has wrong length");
      for (double v : covariances[k]) {
        if (!(v > 0.0)) throw StateError("Mog: non-positive variance");
      }
    } else {
      if (covariances[k].size() != d * d) throw StateError("Mog: full covariance has wrong size");
      for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t j = 0; j < i; ++j) {
          if (covariances[k][i * d + j] != covariances[k][j * d + i]) throw StateError("Mog: asymmetric covariance");
        }
      }
      (void)cholesky(covariances[k], d);
    }
  }
}

std::vector<double> log_densities(const Mog& mog, const Tensor& samples) {
  if (samples.cols() != mog.dim()) {
    throw ShapeError("log_likelihood: samples have " + std::to_string(samples.cols()) + " columns, mixture has dim " +
                     std::to_string(mog.dim()));
  }
  std::vector<double> scratch;
  return joint_log_terms(mog, samples, scratch);
}

double log_likelihood(const Mog& mog, const Tensor& samples) { return sum_of(log_densities(mog, samples)); }

std::vector<double> responsibilities(const Mog& mog, const Tensor& samples) {
  if (samples.cols() != mog.dim()) {
    throw ShapeError("responsibilities: samples " + samples.shape().str() + " do not match mixture dim " +
                     std::to_string(mog.dim()));
  }
  std::vector<double> resp;
  const std::vector<double> ll = joint_log_terms(mog, samples, resp);
  const std::size_t mcount = mog.components();
  for (std::size_t i = 0; i < ll.size(); ++i) {
    for (std::size_t m = 0; m < mcount; ++m) resp[i * mcount + m] = std::exp(resp[i * mcount + m] - ll[i]);
  }
  return resp;
}

EmResult fit_em(const Tensor& samples, const EmConfig& config) {
  if (!samples.defined() || samples.rows() == 0) {
    throw StateError("fit_em: empty sample set");
  }
  if (config.components == 0) throw ConfigError("fit_em: components must be >= 1");
  if (!(config.tolerance > 0.0)) throw ConfigError("fit_em: tolerance must be > 0");
  if (!(config.variance_floor > 0.0)) throw ConfigError("fit_em: variance floor must be > 0");
  const std::size_t n = samples.rows();
  const std::size_t dim = samples.cols();
  const std::size_t mcount = std::min(config.components, n);
  const auto x = samples.data();
  for (double v : x) {
    if (!std::isfinite(v)) throw NumericError("fit_em: non-finite sample");
  }
  const double floor = config.variance_floor;

  // Global moments seed the covariances and re-seeded components.
  std::vector<double> global_mean(dim, 0.0);
  std::vector<double> global_var(dim, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t d = 0; d < dim; ++d) global_mean[d] += x[i * dim + d];
  }
  for (double& v : global_mean) v /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t d = 0; d < dim; ++d) {
      const double diff = x[i * dim + d] - global_mean[d];
      global_var[d] += diff * diff;
    }
  }
  for (double& v : global_var) v = std::max(v / static_cast<double>(n), floor);

  auto initial_covariance = [&]() {
    if (config.covariance == CovarianceType::diagonal) return global_var;
    std::vector<double> full(dim * dim, 0.0);
    for (std::size_t d = 0; d < dim; ++d) full[d * dim + d] = global_var[d];
    return full;
  };

  // Farthest-point seeding from a seeded first pick; ties resolve to the lowest index.
  Rng rng(config.seed);
  std::vector<std::size_t> centers{rng.uniform_index(n)};
  std::vector<double> min_dist(n, std::numeric_limits<double>::infinity());
  while (centers.size() < mcount) {
    const std::size_t last = centers.back();
    for (std::size_t i = 0; i < n; ++i) {
      double d2 = 0.0;
      for (std::size_t d = 0; d < dim; ++d) {
        const double diff = x[i * dim + d] - x[last * dim + d];
        d2 += diff * diff;
      }
      min_dist[i] = std::min(min_dist[i], d2);
    }
    std::size_t best = 0;
    for (std::size_t i = 1; i < n; ++i) {
      if (min_dist[i] > min_dist[best]) best = i;
    }
    centers.push_back(best);
  }

  EmResult result;
  Mog& mog = result.model;
  mog.type = config.covariance;
  mog.weights.assign(mcount, 1.0 / static_cast<double>(mcount));
  for (std::size_t c : centers) {
    mog.means.emplace_back(x.begin() + static_cast<std::ptrdiff_t>(c * dim),
                           x.begin() + static_cast<std::ptrdiff_t>((c + 1) * dim));
    mog.covariances.push_back(initial_covariance());
  }

  std::vector<double> resp;
  std::vector<double> ll = joint_log_terms(mog, samples, resp);
  result.log_likelihood.push_back(sum_of(ll));

  for (std::size_t iter = 0; iter < config.max_iters; ++iter) {
    // E-step: normalize joint terms into responsibilities.
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t m = 0; m < mcount; ++m) resp[i * mcount + m] = std::exp(resp[i * mcount + m] - ll[i]);
    }
    // M-step.
    for (std::size_t m = 0; m < mcount; ++m) {
      double nm = 0.0;
      for (std::size_t i = 0; i < n; ++i) nm += resp[i * mcount + m];
      if (nm <= kEmptyComponent) {
        // Empty component: restart it at the worst-explained sample.
        const std::size_t worst = static_cast<std::size_t>(std::min_element(ll.begin(), ll.end()) - ll.begin());
        mog.means[m].assign(x.begin() + static_cast<std::ptrdiff_t>(worst * dim),
                            x.begin() + static_cast<std::ptrdiff_t>((worst + 1) * dim));
        mog.covariances[m] = initial_covariance();
        mog.weights[m] = 1.0 / static_cast<double>(n);
        ++result.reseeds;
        continue;
      }
      std::vector<double> mu(dim, 0.0);
      for (std::size_t i = 0; i < n; ++i) {
        const double r = resp[i * mcount + m];
        for (std::size_t d = 0; d < dim; ++d) mu[d] += r * x[i * dim + d];
      }
      for (double& v : mu) v /= nm;
      if (config.covariance == CovarianceType::diagonal) {
        std::vector<double> var(dim, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
          const double r = resp[i * mcount + m];
          for (std::size_t d = 0; d < dim; ++d) {
            const double diff = x[i * dim + d] - mu[d];
            var[d] += r * diff * diff;
          }
        }
        for (double& v : var) v = std::max(v / nm, floor);
        mog.covariances[m] = std::move(var);
      } else {
        std::vector<double> cov(dim * dim, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
          const double r = resp[i * mcount + m];
          for (std::size_t a = 0; a < dim; ++a) {
            const double da = x[i * dim + a] - mu[a];
            for (std::size_t b = 0; b <= a; ++b) cov[a * dim + b] += r * da * (x[i * dim + b] - mu[b]);
          }
        }
        for (std::size_t a = 0; a < dim; ++a) {
          for (std::size_t b = 0; b <= a; ++b) {
            cov[a * dim + b] /= nm;
            cov[b * dim + a] = cov[a * dim + b];
          }
          cov[a * dim + a] += floor;
        }
        mog.covariances[m] = std::move(cov);
      }
      mog.means[m] = std::move(mu);
      mog.weights[m] = nm / static_cast<double>(n);
    }
    double total = 0.0;
    for (double w : mog.weights) total += w;
    for (double& w : mog.weights) w /= total;

    ll = joint_log_terms(mog, samples, resp);
    const double current = sum_of(ll);
    const double previous = result.log_likelihood.back();
    result.log_likelihood.push_back(current);
    result.iterations = iter + 1;
    const double gain = current - previous;
    if (gain < config.tolerance * std::max(std::fabs(previous), std::numeric_limits<double>::min())) {
      result.converged = true;
      break;
    }
  }
  return result;
}

Tensor sample(const Mog& mog, std::size_t n, Rng& rng) {
  if (n == 0) throw StateError("sample: n must be >= 1");
  const std::size_t dim = mog.dim();
  const std::size_t mcount = mog.components();
  std::vector<double> cumulative(mcount);
  double acc = 0.0;
  for (std::size_t m = 0; m < mcount; ++m) {
    acc += mog.weights[m];
    cumulative[m] = acc;
  }
  std::vector<std::vector<double>> chols;
  if (mog.type == CovarianceType::full) {
    for (const auto& cov : mog.covariances) chols.push_back(cholesky(cov, dim));
  }
  std::vector<double> out(n * dim);
  std::vector<double> eps(dim);
  for (std::size_t i = 0; i < n; ++i) {
    const double u = rng.uniform() * acc;
    std::size_t m = 0;
    while (m + 1 < mcount && !(u < cumulative[m])) ++m;
    // Skip zero-weight components that share a cumulative boundary.
    while (m + 1 < mcount && mog.weights[m] <= 0.0) ++m;
    for (double& e : eps) e = rng.normal();
    double* row = out.data() + i * dim;
    if (mog.type == CovarianceType::diagonal) {
      for (std::size_t d = 0; d < dim; ++d) row[d] = mog.means[m][d] + std::sqrt(mog.covariances[m][d]) * eps[d];
    } else {
      for (std::size_t a = 0; a < dim; ++a) {
        double s = mog.means[m][a];
        for (std::size_t b = 0; b <= a; ++b) s += chols[m][a * dim + b] * eps[b];
        row[a] = s;
      }
    }
  }
  return Tensor::from_data(n, dim, std::move(out));
}

namespace {
constexpr char kMogMagic[] = "STARMOGB";
constexpr std::uint32_t kMogVersion = 1;
}  // namespace

void save_mog_bank(const std::filesystem::path& path, const MogBank& bank) {
  BinaryWriter w;
  w.bytes(std::string_view(kMogMagic, 8));
  w.u32(kMogVersion);
  w.u32(static_cast<std::uint32_t>(bank.size()));
  for (const auto& [id, mog] : bank) {
    w.u32(static_cast<std::uint32_t>(id));
    w.u32(static_cast<std::uint32_t>(mog.components()));
    w.u32(static_cast<std::uint32_t>(mog.dim()));
    w.u8(static_cast<std::uint8_t>(mog.type));
    for (double v : mog.weights) w.f64(v);
    for (const auto& mu : mog.means) {
      for (double v : mu) w.f64(v);
    }
    for (const auto& cov : mog.covariances) {
      for (double v : cov) w.f64(v);
    }
  }
  w.save(path);
}

MogBank load_mog_bank(const std::filesystem::path& path) {
  BinaryReader r = BinaryReader::open(path);
  r.expect_magic(std::string_view(kMogMagic, 8));
  const std::uint32_t version = r.u32();
  if (version != kMogVersion) throw FormatError(path.string() + ": unsupported version " + std::to_string(version));
  const std::uint32_t count = r.u32();
  MogBank bank;
  for (std::uint32_t k = 0; k < count; ++k) {
    const int id = static_cast<int>(r.u32());
    const std::uint32_t m = r.u32();
    const std::uint32_t dim = r.u32();
    const std::uint8_t type = r.u8();
    if (m == 0 || dim == 0 || type > 1) throw FormatError(path.string() + ": malformed mixture header");
    Mog mog;
    mog.type = static_cast<CovarianceType>(type);
    mog.weights.resize(m);
    for (double& v : mog.weights) v = r.f64();
    mog.means.assign(m, std::vector<double>(dim));
    for (auto& mu : mog.means) {
      for (double& v : mu) v = r.f64();
    }
    const std::size_t cov_len = mog.type == CovarianceType::diagonal ? dim : std::size_t(dim) * dim;
    mog.covariances.assign(m, std::vector<double>(cov_len));
    for (auto& cov : mog.covariances) {
      for (double& v : cov) v = r.f64();
    }
    mog.validate();
    bank.emplace(id, std::move(mog));
  }
  if (r.remaining() != 0) throw FormatError(path.string() + ": trailing bytes after mixture bank");
  return bank;
}

}  // namespace starprompt
