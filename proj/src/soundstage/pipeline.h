#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "soundstage/diffusion.h"
#include "soundstage/dit.h"
#include "soundstage/io.h"
#include "soundstage/latent.h"
#include "soundstage/nn.h"
#include "soundstage/tensor.h"
#include "soundstage/tts.h"

namespace soundstage::pipeline {

// Every field has a flat-config key of the same name, so any default here
// can be overridden from a run's config file.
struct PipelineConfig {
  int text_width = 64;
  int text_blocks = 2;
  int text_heads = 4;
  int dp_hidden = 64;
  int dp_kernel = 3;

  int mel_bins = 16;

  int dit_blocks = 2;
  int dit_hidden = 64;
  int dit_heads = 4;
  int dit_patch = 2;
  std::string text_mode = "concat";  // "concat" | "cross"
  bool env_cross_attention = true;
  int speaker_dim = 0;
  int mapper_hidden = 32;

  int embed_dim = 32;  // E

  // Acoustic front-end contract. Stored in checkpoints so samplers use the
  // same analysis the training data saw.
  int stft_fft = 256;
  int stft_hop = 64;
  int stft_win = 256;
  double stft_fmin = 0.0;
  double stft_fmax = 8000.0;
  uint64_t provider_seed = 0x5eed;

  int t_steps = 50;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  double p_drop_env = 0.1;
  double p_drop_cont = 0.1;

  double lr = 1e-4;  // pre-training rate; fine-tuning halves it
  double weight_decay = 0.0;
  bool freeze_tts = false;  // pin tts.* in every phase
  int codec_steps = 200;
  int pretrain_steps = 1000;
  int finetune_steps = 500;
  uint64_t seed = 0;

  void validate() const;
  dit::TextMode dit_text_mode() const;
  static PipelineConfig from_config(const io::Config& c);
  io::Config to_config() const;
};

struct Pipeline {
  PipelineConfig cfg;
  ParamStore ps;
  latent::Codec codec;        // "codec."
  tts::TextEncoder enc;       // "tts.enc."
  tts::DurationPredictor dp;  // "tts.dp."
  latent::LatentMapper mapper;  // "mapper."
  dit::Dit model;             // "dit."
  diffusion::NoiseSchedule sched;
};

Pipeline make_pipeline(const PipelineConfig& cfg);

struct TrainExample {
  std::vector<int> tokens;  // content text
  Tensor mel;               // [N, M] log-mel target
  Tensor env;               // [E] environment embedding
  Tensor speaker;           // optional [S]
};

// codec: reconstruction only. pretrain: everything but the codec, jointly.
// finetune: TTS frozen, halved rate, diffusion objective only.
enum class Phase { kCodec = 0, kPretrain = 1, kFinetune = 2 };
const char* phase_name(Phase p);

struct ExampleLosses {
  Tensor total;
  // per-term values for logging; zero tensors in the codec phase
  Tensor diff, enc, dp;
};

// rng drives the diffusion timestep, noise, and condition-dropout draws;
// the call sequence is fixed so a restored rng state replays exactly.
ExampleLosses example_losses(const Pipeline& p, const TrainExample& ex, Phase phase,
                             Rng& rng);

class Trainer {
 public:
  explicit Trainer(const PipelineConfig& cfg);
  explicit Trainer(const io::Checkpoint& ck);  // resume

  struct StepLog {
    int64_t step = 0;  // index of the step just taken
    Phase phase = Phase::kCodec;
    double total = 0.0, diff = 0.0, enc = 0.0, dp = 0.0;
  };

  // One full-batch optimization step.
  StepLog step(const std::vector<TrainExample>& batch);

  Phase phase_for(int64_t step) const;
  Phase current_phase() const { return phase_for(step_); }
  int64_t step_count() const { return step_; }
  int64_t total_steps() const;

  Pipeline& pipeline() { return p_; }
  const Pipeline& pipeline() const { return p_; }
  io::Checkpoint make_checkpoint() const;

 private:
  void apply_phase(Phase ph);

  Pipeline p_;
  AdamW opt_;
  Rng rng_;
  int64_t step_ = 0;
};

// "step=<n> phase=<name> total=<v> diff=<v> enc=<v> dp=<v>", %.9g values
std::string format_step_log(const Trainer::StepLog& log);

struct SampleRequest {
  std::vector<int> tokens;
  Tensor env;  // [E]; undefined -> null environment
  Tensor speaker;
  diffusion::GuidanceWeights w;
  int steps = 50;
  diffusion::SampleMode mode = diffusion::SampleMode::kDeterministic;
  uint64_t seed = 0;
  const std::vector<int>* durations = nullptr;  // override the predictor
};

struct SampleResult {
  Tensor mel;                  // [N, M]
  std::vector<int> durations;  // per token, as used
  Tensor latent;               // [C, h, w]
};

SampleResult synthesize(const Pipeline& p, const SampleRequest& req);

}  // namespace soundstage::pipeline
