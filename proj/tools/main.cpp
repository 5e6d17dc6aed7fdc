// soundstage: dataset synthesis, training, sampling, and evaluation from one
// binary. Subcommand flags mirror the config keys they override; see README.
#include <fcntl.h>
#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "soundstage/common.h"
#include "soundstage/datagen.h"
#include "soundstage/dsp.h"
#include "soundstage/embed.h"
#include "soundstage/eval.h"
#include "soundstage/io.h"
#include "soundstage/manifest.h"
#include "soundstage/pipeline.h"
#include "soundstage/tts.h"
#include "soundstage/wav.h"

namespace fs = std::filesystem;
using namespace soundstage;

namespace {

// Manifest audio paths are relative to the manifest's own directory.
std::string resolve_audio(const std::string& manifest_path, const std::string& audio_path) {
  fs::path ap(audio_path);
  if (ap.is_absolute()) return audio_path;
  return (fs::path(manifest_path).parent_path() / ap).string();
}

dsp::StftConfig stft_from(const pipeline::PipelineConfig& cfg) {
  dsp::StftConfig s;
  s.fft_size = cfg.stft_fft;
  s.hop_length = cfg.stft_hop;
  s.window_length = cfg.stft_win;
  s.mel_bins = cfg.mel_bins;
  s.fmin_hz = cfg.stft_fmin;
  s.fmax_hz = cfg.stft_fmax;
  return s;
}

embed::ProviderConfig provider_from(const pipeline::PipelineConfig& cfg) {
  embed::ProviderConfig p;
  p.dim = cfg.embed_dim;
  p.seed = cfg.provider_seed;
  return p;
}

// Accepts [E] directly or [n, E] as the mean over rows.
Tensor read_embedding(const std::string& path, int want_dim, const std::string& what) {
  io::TensorData td = io::read_tensor_file(path);
  if (td.shape.size() == 1) {
    check(static_cast<int>(td.shape[0]) == want_dim,
          what + ": dimension mismatch, file has " + std::to_string(td.shape[0]) +
              ", expected " + std::to_string(want_dim));
    return Tensor::from_data(td.shape, td.data);
  }
  check(td.shape.size() == 2, what + ": expected rank 1 or 2");
  int n = static_cast<int>(td.shape[0]);
  int e = static_cast<int>(td.shape[1]);
  check(e == want_dim, what + ": dimension mismatch, file has " + std::to_string(e) +
                           ", expected " + std::to_string(want_dim));
  check(n >= 1, what + ": empty embedding file");
  std::vector<double> mean(static_cast<size_t>(e), 0.0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < e; ++j) mean[j] += td.data[static_cast<size_t>(i) * e + j];
  for (double& v : mean) v /= n;
  return Tensor::from_data({static_cast<size_t>(e)}, std::move(mean));
}

// One training process per output directory. The file stays behind after a
// crash on purpose; delete it by hand once sure nothing is running.
class DirLock {
 public:
  explicit DirLock(const fs::path& dir) : path_(dir / "lock") {
    fd_ = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    check(fd_ >= 0, "training directory is locked: " + path_.string());
  }
  ~DirLock() {
    if (fd_ >= 0) {
      ::close(fd_);
      ::unlink(path_.c_str());
    }
  }
  DirLock(const DirLock&) = delete;
  DirLock& operator=(const DirLock&) = delete;

 private:
  fs::path path_;
  int fd_ = -1;
};

int cmd_synth_data(const std::string& clean_path, const std::string& noise_path,
                   const std::string& rir_dir, double snr_min, double snr_max,
                   double rir_prob, uint64_t seed, const std::string& out_dir) {
  std::vector<ManifestEntry> clean = read_manifest(clean_path);
  std::vector<ManifestEntry> noise = read_manifest(noise_path);
  for (auto& e : clean) e.audio_path = resolve_audio(clean_path, e.audio_path);
  for (auto& e : noise) e.audio_path = resolve_audio(noise_path, e.audio_path);

  std::vector<datagen::RirEntry> rirs;
  if (!rir_dir.empty()) {
    check(fs::is_directory(rir_dir), "rir dir not found: " + rir_dir);
    std::vector<fs::path> files;
    for (const auto& de : fs::directory_iterator(rir_dir))
      if (de.path().extension() == ".wav") files.push_back(de.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) rirs.push_back({f.stem().string(), read_wav(f.string())});
  }

  datagen::SynthesisSpec spec;
  spec.snr_min_db = snr_min;
  spec.snr_max_db = snr_max;
  spec.rir_probability = rir_prob;
  spec.rng_seed = seed;

  fs::create_directories(out_dir);
  auto load = [](const std::string& p) { return read_wav(p); };
  auto write = [&](const std::string& rel, const dsp::Waveform& w) {
    fs::path p = fs::path(out_dir) / rel;
    fs::create_directories(p.parent_path());
    write_wav(p.string(), w);
  };
  datagen::SynthesisResult res = datagen::synthesize_corpus(clean, noise, rirs, spec, load, write);
  write_manifest((fs::path(out_dir) / "manifest.jsonl").string(), res.manifest);
  for (const auto& err : res.errors) std::cerr << err << "\n";
  return res.errors.empty() ? 0 : 1;
}

int cmd_refine(const std::string& manifest_path, double threshold, const std::string& out_path,
               const std::string& report_path) {
  std::vector<ManifestEntry> entries = read_manifest(manifest_path);
  datagen::FilterResult fr = datagen::filter_by_wer(entries, threshold);
  write_manifest(out_path, fr.kept);

  std::string report;
  report += "input = " + std::to_string(entries.size()) + "\n";
  report += "kept = " + std::to_string(fr.kept.size()) + "\n";
  report += "discarded = " + std::to_string(fr.discarded.size()) + "\n";
  for (size_t i = 0; i < fr.discarded.size(); ++i)
    report += "# " + fr.discarded[i].id + ": " + fr.discard_reasons[i] + "\n";
  std::cout << report;
  if (!report_path.empty()) {
    std::ofstream os(report_path, std::ios::trunc);
    check(os.good(), "cannot write report: " + report_path);
    os << report;
  }
  return 0;
}

std::vector<pipeline::TrainExample> load_examples(const std::string& manifest_path,
                                                  const pipeline::PipelineConfig& cfg) {
  std::vector<ManifestEntry> entries = read_manifest(manifest_path);
  check(!entries.empty(), "training manifest is empty: " + manifest_path);
  dsp::StftConfig stft = stft_from(cfg);
  embed::ProviderConfig prov = provider_from(cfg);
  std::vector<pipeline::TrainExample> out;
  out.reserve(entries.size());
  for (const auto& e : entries) {
    pipeline::TrainExample ex;
    ex.tokens = tts::tokenize(e.transcript);
    check(!ex.tokens.empty(), e.id + ": empty transcript");
    dsp::Waveform w = read_wav(resolve_audio(manifest_path, e.audio_path));
    ex.mel = tts::mel_to_tensor(dsp::mel_spectrogram(w, stft));
    ex.env = embed::toy_audio_embed(w, prov).v;
    out.push_back(std::move(ex));
  }
  return out;
}

int cmd_train(const std::string& config_path, bool resume, int64_t max_steps) {
  io::Config file = io::Config::parse_file(config_path);
  std::string data_manifest = file.get_string("data_manifest", "");
  std::string out_dir = file.get_string("out_dir", "");
  check(!data_manifest.empty(), "config: data_manifest missing");
  check(!out_dir.empty(), "config: out_dir missing");
  pipeline::PipelineConfig cfg = pipeline::PipelineConfig::from_config(file);
  check(cfg.speaker_dim == 0, "train: speaker conditioning has no data source here");

  fs::create_directories(out_dir);
  DirLock lock(out_dir);
  fs::path ck_path = fs::path(out_dir) / "checkpoint.vdck";

  std::vector<pipeline::TrainExample> batch = load_examples(data_manifest, cfg);

  std::unique_ptr<pipeline::Trainer> tr;
  if (resume) {
    check(fs::exists(ck_path), "no checkpoint to resume: " + ck_path.string());
    tr = std::make_unique<pipeline::Trainer>(io::read_checkpoint(ck_path.string()));
  } else {
    tr = std::make_unique<pipeline::Trainer>(cfg);
  }

  std::ofstream log((fs::path(out_dir) / "loss.log").string(),
                    resume ? std::ios::app : std::ios::trunc);
  check(log.good(), "cannot write loss log in " + out_dir);

  int64_t end = tr->total_steps();
  if (max_steps > 0) end = std::min(end, tr->step_count() + max_steps);
  while (tr->step_count() < end) log << pipeline::format_step_log(tr->step(batch)) << std::endl;

  io::Checkpoint ck = tr->make_checkpoint();
  io::write_checkpoint(ck_path.string(), ck);
  return 0;
}

int cmd_sample(const std::string& ck_path, const std::string& text, const std::string& env_text,
               const std::string& env_audio, const std::string& env_file,
               const std::string& speaker_file, double w_env, double w_cont, int steps,
               const std::string& mode, uint64_t seed, const std::string& out_wav,
               const std::string& out_mel, int glim_iters, int sample_rate) {
  io::Checkpoint ck = io::read_checkpoint(ck_path);
  pipeline::PipelineConfig cfg =
      pipeline::PipelineConfig::from_config(io::Config::parse_string(ck.config_text));
  pipeline::Pipeline p = pipeline::make_pipeline(cfg);
  int loaded = io::load_params(ck, p.ps);
  check(loaded == static_cast<int>(p.ps.names().size()),
        "checkpoint does not cover the model parameters");

  embed::ProviderConfig prov = provider_from(cfg);
  pipeline::SampleRequest req;
  req.tokens = tts::tokenize(text);
  check(!req.tokens.empty(), "sample: empty --text");
  if (!env_text.empty()) req.env = embed::toy_text_embed(env_text, prov).v;
  if (!env_audio.empty()) req.env = embed::toy_audio_embed(read_wav(env_audio), prov).v;
  if (!env_file.empty()) req.env = read_embedding(env_file, cfg.embed_dim, "env embedding");
  if (!speaker_file.empty()) {
    check(cfg.speaker_dim > 0, "sample: model has no speaker conditioning");
    req.speaker = read_embedding(speaker_file, cfg.speaker_dim, "speaker embedding");
  } else {
    check(cfg.speaker_dim == 0, "sample: model needs --speaker-embedding-file");
  }
  req.w.w_env = w_env;
  req.w.w_cont = w_cont;
  check(steps >= 1, "sample: steps must be >= 1");
  req.steps = steps;
  req.mode = mode == "ancestral" ? diffusion::SampleMode::kAncestral
                                 : diffusion::SampleMode::kDeterministic;
  req.seed = seed;

  pipeline::SampleResult res = pipeline::synthesize(p, req);

  if (!out_mel.empty())
    io::write_tensor_file(out_mel, res.mel.shape(), res.mel.data(), io::kDtypeF64);
  if (!out_wav.empty()) {
    dsp::MelSpectrogram m;
    m.frames = static_cast<int>(res.mel.dim(0));
    m.mel_bins = static_cast<int>(res.mel.dim(1));
    m.values = res.mel.data();
    dsp::Waveform w = dsp::griffin_lim(m, stft_from(cfg), sample_rate, glim_iters);
    write_wav(out_wav, w);
  }
  return 0;
}

int cmd_translate(const std::string& ck_path, const std::string& image_file,
                  const std::string& out_file, int steps, uint64_t seed) {
  io::Checkpoint ck = io::read_checkpoint(ck_path);
  io::Config c = io::Config::parse_string(ck.config_text);
  embed::TranslatorConfig tc;
  tc.dim = c.get_int("i2a_dim", tc.dim);
  tc.hidden = c.get_int("i2a_hidden", tc.hidden);
  tc.blocks = c.get_int("i2a_blocks", tc.blocks);
  tc.heads = c.get_int("i2a_heads", tc.heads);
  tc.t_steps = c.get_int("i2a_t_steps", tc.t_steps);
  tc.l1 = c.get_bool("i2a_l1", tc.l1);
  double beta_start = c.get_double("i2a_beta_start", 1e-4);
  double beta_end = c.get_double("i2a_beta_end", 0.02);

  ParamStore ps;
  Rng init(0);
  embed::Translator tr = embed::make_translator(ps, "i2a.", tc, init);
  int loaded = io::load_params(ck, ps);
  check(loaded == static_cast<int>(ps.names().size()),
        "checkpoint does not cover the translator parameters");

  Tensor y = read_embedding(image_file, tc.dim, "image embedding");
  diffusion::NoiseSchedule sched = diffusion::NoiseSchedule::linear(tc.t_steps, beta_start, beta_end);
  Rng rng(seed);
  embed::CondEmbedding z = embed::translate_image(tr, y, sched, steps, rng);

  io::write_tensor_file(out_file, z.v.shape(), z.v.data(), io::kDtypeF32);
  return 0;
}

int cmd_eval(const std::string& gen_path, const std::string& ref_path,
             const std::vector<std::string>& metrics, const std::string& out_path, int embed_dim,
             uint64_t provider_seed) {
  std::set<std::string> want(metrics.begin(), metrics.end());
  embed::ProviderConfig prov{embed_dim, provider_seed};
  std::vector<ManifestEntry> gen = read_manifest(gen_path);

  auto audio_embeds = [&](const std::vector<ManifestEntry>& entries, const std::string& mpath) {
    std::vector<Tensor> out;
    out.reserve(entries.size());
    for (const auto& e : entries)
      out.push_back(embed::toy_audio_embed(read_wav(resolve_audio(mpath, e.audio_path)), prov).v);
    return out;
  };

  io::Config report;
  char buf[40];
  auto num = [&buf](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };

  std::vector<Tensor> gen_audio;
  if (want.count("fad") || want.count("clap")) gen_audio = audio_embeds(gen, gen_path);

  if (want.count("fad")) {
    check(!ref_path.empty(), "fad needs --ref-manifest");
    std::vector<ManifestEntry> ref = read_manifest(ref_path);
    bool ridged = false;
    double fad = eval::frechet_distance(gen_audio, audio_embeds(ref, ref_path), &ridged);
    report.set("fad", num(fad));
    report.set("fad_ridged", ridged ? "true" : "false");
  }
  if (want.count("clap")) {
    std::vector<Tensor> audio, text;
    for (size_t i = 0; i < gen.size(); ++i) {
      if (!gen[i].env_caption) continue;
      audio.push_back(gen_audio[i]);
      text.push_back(embed::toy_text_embed(*gen[i].env_caption, prov).v);
    }
    check(!audio.empty(), "clap: no env_caption entries in " + gen_path);
    report.set("clap", num(eval::clap_score(audio, text)));
  }
  if (want.count("wer")) {
    eval::WerReport wr = eval::wer_report(gen);
    report.set("wer", num(wr.corpus_wer));
    report.set("wer_skipped", std::to_string(wr.skipped));
  }

  std::string text = report.serialize();
  std::cout << text;
  if (!out_path.empty()) {
    std::ofstream os(out_path, std::ios::trunc);
    check(os.good(), "cannot write report: " + out_path);
    os << text;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"speech-in-scene synthesis pipeline"};
  app.require_subcommand(1);
  int rc = 0;

  auto* synth = app.add_subcommand("synth-data", "mix clean speech with noise and RIRs");
  std::string sd_clean, sd_noise, sd_rir_dir, sd_out;
  double sd_snr_min = 2.0, sd_snr_max = 10.0, sd_rir_prob = 0.5;
  uint64_t sd_seed = 0;
  synth->add_option("--clean-manifest", sd_clean)->required();
  synth->add_option("--noise-manifest", sd_noise)->required();
  synth->add_option("--rir-dir", sd_rir_dir);
  synth->add_option("--snr-min", sd_snr_min, "dB")->capture_default_str();
  synth->add_option("--snr-max", sd_snr_max, "dB")->capture_default_str();
  synth->add_option("--rir-prob", sd_rir_prob)->capture_default_str();
  synth->add_option("--seed", sd_seed)->capture_default_str();
  synth->add_option("--out-dir", sd_out)->required();
  synth->callback([&] {
    rc = cmd_synth_data(sd_clean, sd_noise, sd_rir_dir, sd_snr_min, sd_snr_max, sd_rir_prob,
                        sd_seed, sd_out);
  });

  auto* refine = app.add_subcommand("refine", "drop entries whose hypothesis WER is too high");
  std::string rf_manifest, rf_out, rf_report;
  double rf_threshold = 0.2;
  refine->add_option("--manifest", rf_manifest)->required();
  refine->add_option("--wer-threshold", rf_threshold)->capture_default_str();
  refine->add_option("--out", rf_out)->required();
  refine->add_option("--report", rf_report, "also write the report here");
  refine->callback([&] { rc = cmd_refine(rf_manifest, rf_threshold, rf_out, rf_report); });

  auto* train = app.add_subcommand("train", "run the phased training schedule");
  std::string tr_config;
  bool tr_resume = false;
  int64_t tr_max_steps = 0;
  train->add_option("--config", tr_config, "flat key/value file; see README")->required();
  train->add_flag("--resume", tr_resume, "continue from out_dir/checkpoint.vdck");
  train->add_option("--max-steps", tr_max_steps, "stop after this many steps (0 = full schedule)")
      ->capture_default_str();
  train->callback([&] { rc = cmd_train(tr_config, tr_resume, tr_max_steps); });

  auto* sample = app.add_subcommand("sample", "synthesize speech for a text in an environment");
  std::string sm_ck, sm_text, sm_env_text, sm_env_audio, sm_env_file, sm_speaker, sm_out_wav,
      sm_out_mel, sm_mode = "deterministic";
  double sm_w_env = 5.0, sm_w_cont = 5.0;
  int sm_steps = 50, sm_glim = 30, sm_rate = 16000;
  uint64_t sm_seed = 0;
  sample->add_option("--checkpoint", sm_ck)->required();
  sample->add_option("--text", sm_text, "content text")->required();
  auto* oet = sample->add_option("--env-text", sm_env_text, "environment caption");
  auto* oea = sample->add_option("--env-audio", sm_env_audio, "environment wav");
  auto* oef = sample->add_option("--env-embedding-file", sm_env_file, "tensor file, [E] or [n,E]");
  oet->excludes(oea)->excludes(oef);
  oea->excludes(oef);
  sample->add_option("--speaker-embedding-file", sm_speaker);
  sample->add_option("--w-env", sm_w_env)->capture_default_str();
  sample->add_option("--w-cont", sm_w_cont)->capture_default_str();
  sample->add_option("--steps", sm_steps)->capture_default_str();
  sample->add_option("--mode", sm_mode)->check(CLI::IsMember({"deterministic", "ancestral"}));
  sample->add_option("--seed", sm_seed)->capture_default_str();
  sample->add_option("--out", sm_out_wav, "output wav path");
  sample->add_option("--out-mel", sm_out_mel, "also write the mel as a tensor file (f64)");
  sample->add_option("--glim-iters", sm_glim)->capture_default_str();
  sample->add_option("--sample-rate", sm_rate, "Hz")->capture_default_str();
  sample->callback([&] {
    check(!sm_out_wav.empty() || !sm_out_mel.empty(), "sample: need --out or --out-mel");
    rc = cmd_sample(sm_ck, sm_text, sm_env_text, sm_env_audio, sm_env_file, sm_speaker, sm_w_env,
                    sm_w_cont, sm_steps, sm_mode, sm_seed, sm_out_wav, sm_out_mel, sm_glim,
                    sm_rate);
  });

  auto* translate = app.add_subcommand("translate", "map an image embedding to audio space");
  std::string tl_ck, tl_in, tl_out;
  int tl_steps = 25;
  uint64_t tl_seed = 0;
  translate->add_option("--i2a-checkpoint", tl_ck)->required();
  translate->add_option("--image-embedding-file", tl_in)->required();
  translate->add_option("--out-embedding-file", tl_out)->required();
  translate->add_option("--steps", tl_steps)->capture_default_str();
  translate->add_option("--seed", tl_seed)->capture_default_str();
  translate->callback([&] { rc = cmd_translate(tl_ck, tl_in, tl_out, tl_steps, tl_seed); });

  auto* ev = app.add_subcommand("eval", "metrics report for a generated corpus");
  std::string ev_gen, ev_ref, ev_out;
  std::vector<std::string> ev_metrics = {"fad", "clap", "wer"};
  int ev_dim = 32;
  uint64_t ev_seed = 0x5eed;
  ev->add_option("--gen-manifest", ev_gen)->required();
  ev->add_option("--ref-manifest", ev_ref, "reference corpus for fad");
  ev->add_option("--metrics", ev_metrics, "subset of fad,clap,wer")
      ->delimiter(',')
      ->check(CLI::IsMember({"fad", "clap", "wer"}));
  ev->add_option("--out", ev_out, "also write the report here");
  ev->add_option("--embed-dim", ev_dim)->capture_default_str();
  ev->add_option("--provider-seed", ev_seed)->capture_default_str();
  ev->callback([&] { rc = cmd_eval(ev_gen, ev_ref, ev_metrics, ev_out, ev_dim, ev_seed); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return rc;
}
