#include "soundstage/eval.h"

#include <Eigen/Dense>
#include <cmath>

#include "soundstage/common.h"
#include "soundstage/datagen.h"

namespace soundstage::eval {

namespace {

Eigen::MatrixXd as_matrix(const std::vector<Tensor>& set, const char* which) {
  check(!set.empty(), std::string("frechet_distance: empty set ") + which);
  int e = 0;
  for (const auto& v : set) {
    check(v.rank() == 1, "frechet_distance: samples must be vectors");
    if (e == 0) e = v.dim(0);
    check(v.dim(0) == e, "frechet_distance: inconsistent dimensions");
  }
  Eigen::MatrixXd m(static_cast<Eigen::Index>(set.size()), e);
  for (size_t i = 0; i < set.size(); ++i)
    for (int j = 0; j < e; ++j) m(static_cast<Eigen::Index>(i), j) = set[i].data()[static_cast<size_t>(j)];
  return m;
}

Eigen::MatrixXd covariance(const Eigen::MatrixXd& samples) {
  Eigen::Index n = samples.rows();
  Eigen::MatrixXd centered = samples.rowwise() - samples.colwise().mean();
  if (n < 2) return Eigen::MatrixXd::Zero(samples.cols(), samples.cols());
  return centered.transpose() * centered / static_cast<double>(n - 1);
}

// symmetric PSD square root, negative eigenvalues clamped to zero
Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
  Eigen::VectorXd d = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * d.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

double frechet_distance(const std::vector<Tensor>& a, const std::vector<Tensor>& b,
                        bool* ridged) {
  Eigen::MatrixXd ma = as_matrix(a, "A");
  Eigen::MatrixXd mb = as_matrix(b, "B");
  check(ma.cols() == mb.cols(), "frechet_distance: dimension mismatch between sets");
  Eigen::Index e = ma.cols();

  Eigen::VectorXd mu_a = ma.colwise().mean();
  Eigen::VectorXd mu_b = mb.colwise().mean();
  Eigen::MatrixXd sa = covariance(ma);
  Eigen::MatrixXd sb = covariance(mb);

  bool need_ridge = ma.rows() < e + 1 || mb.rows() < e + 1;
  if (need_ridge) {
    sa += 1e-6 * Eigen::MatrixXd::Identity(e, e);
    sb += 1e-6 * Eigen::MatrixXd::Identity(e, e);
  }
  if (ridged) *ridged = need_ridge;

  // Tr((S_A S_B)^{1/2}) computed from the congruent symmetric product
  // S_A^{1/2} S_B S_A^{1/2}, which shares its eigenvalues.
  Eigen::MatrixXd ra = psd_sqrt(sa);
  Eigen::MatrixXd prod = ra * sb * ra;
  prod = 0.5 * (prod + prod.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(prod);
  double tr_sqrt = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();

  double d = (mu_a - mu_b).squaredNorm() + sa.trace() + sb.trace() - 2.0 * tr_sqrt;
  return std::max(0.0, d);
}

double clap_score(const std::vector<Tensor>& audio, const std::vector<Tensor>& text) {
  check(audio.size() == text.size(), "clap_score: count mismatch");
  check(!audio.empty(), "clap_score: empty input");
  double sum = 0.0;
  for (size_t i = 0; i < audio.size(); ++i) {
    const auto& a = audio[i];
    const auto& t = text[i];
    check(a.rank() == 1 && t.rank() == 1 && a.dim(0) == t.dim(0),
          "clap_score: pair dimension mismatch");
    double dot = 0.0, na = 0.0, nt = 0.0;
    for (size_t j = 0; j < a.data().size(); ++j) {
      dot += a.data()[j] * t.data()[j];
      na += a.data()[j] * a.data()[j];
      nt += t.data()[j] * t.data()[j];
    }
    sum += dot / std::max(std::sqrt(na) * std::sqrt(nt), 1e-12);
  }
  return sum / static_cast<double>(audio.size());
}

WerReport wer_report(const std::vector<ManifestEntry>& entries) {
  WerReport report;
  long long total_edits = 0, total_words = 0;
  for (const auto& e : entries) {
    if (!e.hypothesis_transcript) {
      ++report.skipped;
      continue;
    }
    auto counts = datagen::word_edit_counts(e.transcript, *e.hypothesis_transcript);
    WerEntry we;
    we.id = e.id;
    we.edits = counts.edits;
    we.ref_words = counts.ref_words;
    we.wer = static_cast<double>(counts.edits) / counts.ref_words;
    report.entries.push_back(we);
    total_edits += counts.edits;
    total_words += counts.ref_words;
  }
  report.corpus_wer =
      total_words > 0 ? static_cast<double>(total_edits) / static_cast<double>(total_words) : 0.0;
  return report;
}

}  // namespace soundstage::eval
