#include "lt2m/eval.hpp"

#include <Eigen/Eigenvalues>

#include <chrono>
#include <cstdio>
#include <sstream>

namespace lt2m {

namespace {

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m) {
  const Eigen::MatrixXd sym = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
  const Eigen::VectorXd root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * root.asDiagonal() * es.eigenvectors().transpose();
}

void gaussian_fit(const Eigen::MatrixXd& rows, Eigen::VectorXd& mu, Eigen::MatrixXd& cov) {
  const Index n = rows.rows();
  mu = rows.colwise().mean().transpose();
  const Eigen::MatrixXd centered = rows.rowwise() - mu.transpose();
  cov = n > 1 ? Eigen::MatrixXd(centered.transpose() * centered / double(n - 1))
              : Eigen::MatrixXd::Zero(rows.cols(), rows.cols());
  cov += 1e-6 * Eigen::MatrixXd::Identity(rows.cols(), rows.cols());
}

}  // namespace

double frechet_distance(const Eigen::VectorXd& mu1, const Eigen::MatrixXd& cov1,
                        const Eigen::VectorXd& mu2, const Eigen::MatrixXd& cov2) {
  if (mu1.size() != mu2.size() || cov1.rows() != mu1.size() || cov2.rows() != mu2.size()) {
    throw ShapeError("frechet_distance: dimension mismatch");
  }
  const Eigen::MatrixXd r1 = psd_sqrt(cov1);
  const Eigen::MatrixXd cross = psd_sqrt(r1 * cov2 * r1);
  const double d = (mu1 - mu2).squaredNorm() + cov1.trace() + cov2.trace() - 2.0 * cross.trace();
  return std::max(d, 0.0);
}

double toy_fid(const Eigen::MatrixXd& features_a, const Eigen::MatrixXd& features_b) {
  if (features_a.rows() < 1 || features_b.rows() < 1 || features_a.cols() != features_b.cols()) {
    throw ShapeError("toy_fid: need non-empty feature sets of equal width");
  }
  Eigen::VectorXd mu1, mu2;
  Eigen::MatrixXd c1, c2;
  gaussian_fit(features_a, mu1, c1);
  gaussian_fit(features_b, mu2, c2);
  return frechet_distance(mu1, c1, mu2, c2);
}

Eigen::MatrixXd feature_matrix(const std::vector<Eigen::MatrixXd>& motions) {
  if (motions.empty()) return {};
  const Index w = 2 * motions.front().cols();
  Eigen::MatrixXd out(Index(motions.size()), w);
  for (std::size_t i = 0; i < motions.size(); ++i) {
    out.row(Index(i)) = motion_features(motions[i]).transpose();
  }
  return out;
}

std::string EvalMetrics::to_json() const {
  char buf[160];
  std::snprintf(buf, sizeof buf, "{\"toy_fid\":%.9g,\"cond_acc\":%.9g,\"n\":%lld}", toy_fid,
                cond_acc, static_cast<long long>(n));
  return buf;
}

std::vector<Eigen::MatrixXd> generate_for(const LightT2M<float>& model,
                                          const NoiseSchedule& schedule,
                                          const Normalizer& normalizer,
                                          const std::vector<MotionSequence>& items,
                                          const EvalOptions& options) {
  const Denoiser<float> f = as_denoiser(model);
  const Rng root(options.seed);
  std::vector<Eigen::MatrixXd> out;
  out.reserve(items.size());
  for (std::size_t i = 0; i < items.size(); ++i) {
    Rng rng = root.split(i);
    const Tensor<float> m = sample(f, schedule, std::optional<Index>(items[i].caption),
                                   options.sampling, items[i].length(),
                                   model.config().motion_dim, rng, &normalizer);
    out.emplace_back(m.matrix().cast<double>());
  }
  return out;
}

EvalMetrics evaluate(const LightT2M<float>& model, const NoiseSchedule& schedule,
                     const Normalizer& normalizer, const std::vector<MotionSequence>& test,
                     const EvalOptions& options) {
  if (test.empty()) throw std::invalid_argument("evaluate: empty test split");
  const auto generated = generate_for(model, schedule, normalizer, test, options);
  std::vector<Eigen::MatrixXd> truth;
  Index hits = 0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    truth.emplace_back(test[i].frames.cast<double>());
    hits += classify_motion(generated[i]) == test[i].caption;
  }
  EvalMetrics m;
  m.n = Index(test.size());
  m.cond_acc = double(hits) / double(m.n);
  m.toy_fid = toy_fid(feature_matrix(generated), feature_matrix(truth));
  return m;
}

// ------------------------------------------------------------------ bench

std::string BenchReport::to_json() const {
  std::ostringstream os;
  os << "{\"runs\":" << runs << ",\"warmup\":" << warmup
     << ",\"pbds_max_deviation\":" << pbds_max_deviation
     << ",\"note\":\"scan module only; text encoding excluded\",\"rows\":[";
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    os << (i ? "," : "") << "{\"mode\":\"" << to_string(r.mode) << "\",\"length\":" << r.length
       << ",\"scan_params\":" << r.scan_params << ",\"model_params\":" << r.model_params
       << ",\"mean_ms\":" << r.mean_ms << "}";
  }
  os << "]}";
  return os.str();
}

std::string BenchReport::to_text() const {
  std::ostringstream os;
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-5s %6s %12s %12s %10s\n", "mode", "L", "scan_params",
                "model_params", "mean_ms");
  os << buf;
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%-5s %6lld %12lld %12lld %10.4f\n", to_string(r.mode),
                  static_cast<long long>(r.length), static_cast<long long>(r.scan_params),
                  static_cast<long long>(r.model_params), r.mean_ms);
    os << buf;
  }
  os << "pbds max deviation from slice-of-concat reference: " << pbds_max_deviation << "\n"
     << "timing: mean of " << runs << " forwards after " << warmup
     << " warmups; denoiser scan only, text encoding excluded\n";
  return os.str();
}

BenchReport bench_scan(const ModelConfig& config, const std::vector<Index>& lengths, Index runs,
                       Index warmup, std::uint64_t seed) {
  if (runs < 1 || warmup < 0) throw std::invalid_argument("bench_scan: runs must be >= 1");
  BenchReport report;
  report.runs = runs;
  report.warmup = warmup;
  const SsmConfig ssm = config.ssm();
  for (ScanMode mode : {ScanMode::kSds, ScanMode::kBds, ScanMode::kPbds}) {
    Rng rng(seed);
    const auto scan = ScanModule<float>::init(ssm, mode, rng);
    ParamList<float> params;
    scan.collect(params, "scan");
    ModelConfig mc = config;
    mc.scan = mode;
    const Index model_params = LightT2M<float>(mc, seed).param_count();
    for (Index len : lengths) {
      Rng data = Rng(seed).split(std::uint64_t(len));
      const Tensor<float> x = standard_normal<float>({len, config.dim}, data);
      for (Index i = 0; i < warmup; ++i) (void)scan.forward(x);
      const auto t0 = std::chrono::steady_clock::now();
      for (Index i = 0; i < runs; ++i) (void)scan.forward(x);
      const auto t1 = std::chrono::steady_clock::now();
      BenchRow row;
      row.mode = mode;
      row.length = len;
      row.scan_params = count_scalars(params);
      row.model_params = model_params;
      row.mean_ms = std::chrono::duration<double, std::milli>(t1 - t0).count() / double(runs);
      report.rows.push_back(row);
      if (mode == ScanMode::kPbds) {
        const Tensor<float> y = scan.forward(x);
        const Tensor<float> ref = slice(
            scan.forward_block.forward(concat<float>({reverse(x, 0), x}, 0)), 0, len, len);
        report.pbds_max_deviation = std::max(
            report.pbds_max_deviation, double((y.array() - ref.array()).abs().maxCoeff()));
      }
    }
  }
  return report;
}

}  // namespace lt2m
