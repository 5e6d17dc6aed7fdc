#pragma once

#include <string>
#include <vector>

#include "soundstage/manifest.h"
#include "soundstage/tensor.h"

namespace soundstage::eval {

// ||mu_A - mu_B||^2 + Tr(S_A + S_B - 2 (S_A S_B)^{1/2}) over Gaussian fits
// of the two sets (each element one sample, all the same dimension E).
// Covariances use the n-1 divisor. When a set has fewer than E+1 samples
// its covariance is rank-deficient; a 1e-6 ridge is added to both and
// reported through `ridged`. Result is clamped at zero.
double frechet_distance(const std::vector<Tensor>& a, const std::vector<Tensor>& b,
                        bool* ridged = nullptr);

// Mean cosine similarity over pairs, in [-1, 1].
double clap_score(const std::vector<Tensor>& audio, const std::vector<Tensor>& text);

struct WerEntry {
  std::string id;
  int edits = 0;
  int ref_words = 0;
  double wer = 0.0;
};

struct WerReport {
  std::vector<WerEntry> entries;  // scored entries only
  double corpus_wer = 0.0;        // total edits / total reference words
  int skipped = 0;                // entries without a hypothesis transcript
};

// Pools edit counts over the corpus; this is not the mean of per-entry WERs.
WerReport wer_report(const std::vector<ManifestEntry>& entries);

}  // namespace soundstage::eval
