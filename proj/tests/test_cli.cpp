// Drives the real binary through std::system on fixture corpora in a temp
// tree. Fixtures are built in-process with the library, then everything the
// user would do goes through argv.
#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "soundstage/datagen.h"
#include "soundstage/dsp.h"
#include "soundstage/embed.h"
#include "soundstage/io.h"
#include "soundstage/manifest.h"
#include "soundstage/nn.h"
#include "soundstage/pipeline.h"
#include "soundstage/rng.h"
#include "soundstage/wav.h"

namespace fs = std::filesystem;
using namespace soundstage;

namespace {

fs::path workspace(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / "soundstage_cli_test" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

int run(const std::string& args, const fs::path& log_dir) {
  std::string cmd = std::string(SOUNDSTAGE_BIN) + " " + args + " > " +
                    (log_dir / "stdout.txt").string() + " 2> " +
                    (log_dir / "stderr.txt").string();
  int st = std::system(cmd.c_str());
  return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  REQUIRE(is.good());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

dsp::Waveform tone(double hz, double sec, uint64_t noise_seed = 0) {
  dsp::Waveform w;
  w.sample_rate_hz = 16000;
  int n = static_cast<int>(sec * w.sample_rate_hz);
  Rng rng(noise_seed);
  for (int i = 0; i < n; ++i) {
    double t = static_cast<double>(i) / w.sample_rate_hz;
    double v = 0.5 * std::sin(2.0 * M_PI * hz * t);
    if (noise_seed) v = 0.4 * (2.0 * rng.uniform() - 1.0);
    w.samples.push_back(v);
  }
  return w;
}

// Clean speech stand-ins plus one noise clip, each under its own manifest.
struct Corpus {
  fs::path clean_manifest, noise_manifest;
};

Corpus make_corpus(const fs::path& dir) {
  fs::create_directories(dir / "clean");
  fs::create_directories(dir / "noise");
  write_wav((dir / "clean" / "a.wav").string(), tone(300.0, 0.06));
  write_wav((dir / "clean" / "b.wav").string(), tone(520.0, 0.05));
  std::vector<ManifestEntry> clean(2);
  clean[0].id = "a";
  clean[0].audio_path = "a.wav";
  clean[0].transcript = "go east";
  clean[1].id = "b";
  clean[1].audio_path = "b.wav";
  clean[1].transcript = "stop now";
  write_manifest((dir / "clean" / "manifest.jsonl").string(), clean);

  write_wav((dir / "noise" / "n0.wav").string(), tone(0.0, 0.08, 77));
  std::vector<ManifestEntry> noise(1);
  noise[0].id = "n0";
  noise[0].audio_path = "n0.wav";
  noise[0].transcript = "";
  noise[0].env_caption = "street noise";
  write_manifest((dir / "noise" / "manifest.jsonl").string(), noise);

  return {dir / "clean" / "manifest.jsonl", dir / "noise" / "manifest.jsonl"};
}

std::string train_config(const fs::path& data_manifest, const fs::path& out_dir,
                         const std::string& extra = "") {
  std::string s;
  s += "text_width = 16\ntext_blocks = 1\ntext_heads = 2\n";
  s += "dp_hidden = 8\ndp_kernel = 3\nmel_bins = 8\n";
  s += "dit_blocks = 1\ndit_hidden = 16\ndit_heads = 2\ndit_patch = 1\n";
  s += "mapper_hidden = 8\nembed_dim = 8\n";
  s += "stft_fft = 64\nstft_hop = 16\nstft_win = 64\n";
  s += "t_steps = 10\nlr = 0.001\nseed = 5\n";
  s += "codec_steps = 2\npretrain_steps = 2\nfinetune_steps = 1\n";
  s += "data_manifest = " + data_manifest.string() + "\n";
  s += "out_dir = " + out_dir.string() + "\n";
  s += extra;
  return s;
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream os(p, std::ios::binary);
  REQUIRE(os.good());
  os << text;
}

}  // namespace

TEST_CASE("synth-data builds a corpus tree and is seed-deterministic") {
  fs::path dir = workspace("synth");
  Corpus c = make_corpus(dir);

  std::string base = "synth-data --clean-manifest " + c.clean_manifest.string() +
                     " --noise-manifest " + c.noise_manifest.string() +
                     " --snr-min 3 --snr-max 9 --rir-prob 0 --seed 11 --out-dir ";
  CHECK(run(base + (dir / "out1").string(), dir) == 0);
  CHECK(run(base + (dir / "out2").string(), dir) == 0);

  auto made = read_manifest((dir / "out1" / "manifest.jsonl").string());
  REQUIRE(made.size() == 2);
  CHECK(made[0].transcript == "go east");
  CHECK(made[0].env_caption.has_value());
  REQUIRE(made[0].snr_db.has_value());
  CHECK(*made[0].snr_db >= 3.0);
  CHECK(*made[0].snr_db <= 9.0);

  for (const char* f : {"manifest.jsonl", "a.wav", "b.wav"})
    CHECK(slurp(dir / "out1" / f) == slurp(dir / "out2" / f));
}

TEST_CASE("synth-data applies RIRs from a directory") {
  fs::path dir = workspace("synth_rir");
  Corpus c = make_corpus(dir);
  fs::create_directories(dir / "rirs");
  dsp::Waveform rir;
  rir.sample_rate_hz = 16000;
  rir.samples = {1.0, 0.0, 0.0, 0.35};
  write_wav((dir / "rirs" / "room0.wav").string(), rir);

  int rc = run("synth-data --clean-manifest " + c.clean_manifest.string() +
                   " --noise-manifest " + c.noise_manifest.string() + " --rir-dir " +
                   (dir / "rirs").string() + " --rir-prob 1 --seed 4 --out-dir " +
                   (dir / "out").string(),
               dir);
  CHECK(rc == 0);
  auto made = read_manifest((dir / "out" / "manifest.jsonl").string());
  REQUIRE(made.size() == 2);
  for (const auto& e : made) {
    REQUIRE(e.rir_id.has_value());
    CHECK(*e.rir_id == "room0");
  }
}

TEST_CASE("synth-data with an empty noise pool fails loudly") {
  fs::path dir = workspace("synth_empty");
  Corpus c = make_corpus(dir);
  write_manifest((dir / "noise" / "manifest.jsonl").string(), {});

  int rc = run("synth-data --clean-manifest " + c.clean_manifest.string() +
                   " --noise-manifest " + c.noise_manifest.string() + " --seed 1 --out-dir " +
                   (dir / "out").string(),
               dir);
  CHECK(rc != 0);
  CHECK(slurp(dir / "stderr.txt").find("empty noise pool") != std::string::npos);
}

TEST_CASE("refine partitions a manifest and reports counts that sum up") {
  fs::path dir = workspace("refine");
  std::vector<ManifestEntry> entries(4);
  entries[0] = {"e0", "e0.wav", "alpha beta gamma delta", "alpha beta gamma delta"};
  entries[1] = {"e1", "e1.wav", "one two three four five", "one two three four nine"};
  entries[2] = {"e2", "e2.wav", "a b c d", "a b c x"};  // 0.25
  entries[3] = {"e3", "e3.wav", "left right"};          // no hypothesis
  write_manifest((dir / "in.jsonl").string(), entries);

  int rc = run("refine --manifest " + (dir / "in.jsonl").string() + " --out " +
                   (dir / "kept.jsonl").string() + " --report " + (dir / "report.txt").string(),
               dir);
  CHECK(rc == 0);

  auto kept = read_manifest((dir / "kept.jsonl").string());
  REQUIRE(kept.size() == 2);
  CHECK(kept[0].id == "e0");
  CHECK(kept[1].id == "e1");

  io::Config rep = io::Config::parse_string(slurp(dir / "report.txt"));
  CHECK(rep.get_int("input", -1) == 4);
  CHECK(rep.get_int("kept", -1) == 2);
  CHECK(rep.get_int("discarded", -1) == 2);
  CHECK(rep.get_int("kept", -1) + rep.get_int("discarded", -1) == rep.get_int("input", -1));
  CHECK(slurp(dir / "report.txt").find("no-hypothesis") != std::string::npos);
}

TEST_CASE("train writes a loss log, a checkpoint, and releases its lock") {
  fs::path dir = workspace("train");
  Corpus c = make_corpus(dir);
  write_file(dir / "train.cfg", train_config(c.clean_manifest, dir / "run"));

  CHECK(run("train --config " + (dir / "train.cfg").string(), dir) == 0);
  CHECK(fs::exists(dir / "run" / "checkpoint.vdck"));
  CHECK(!fs::exists(dir / "run" / "lock"));

  std::istringstream log(slurp(dir / "run" / "loss.log"));
  std::string line;
  int lines = 0;
  while (std::getline(log, line)) {
    CHECK(line.find("step=") == 0);
    ++lines;
  }
  CHECK(lines == 5);

  SUBCASE("a second process cannot enter the same directory") {
    write_file(dir / "run" / "lock", "");
    CHECK(run("train --config " + (dir / "train.cfg").string(), dir) != 0);
    CHECK(slurp(dir / "stderr.txt").find("locked") != std::string::npos);
  }
}

TEST_CASE("interrupted training resumes to an identical result") {
  fs::path dir = workspace("resume");
  Corpus c = make_corpus(dir);
  write_file(dir / "full.cfg", train_config(c.clean_manifest, dir / "full"));
  write_file(dir / "split.cfg", train_config(c.clean_manifest, dir / "split"));

  CHECK(run("train --config " + (dir / "full.cfg").string(), dir) == 0);
  CHECK(run("train --config " + (dir / "split.cfg").string() + " --max-steps 2", dir) == 0);
  CHECK(run("train --config " + (dir / "split.cfg").string() + " --resume", dir) == 0);

  CHECK(slurp(dir / "split" / "loss.log") == slurp(dir / "full" / "loss.log"));
  CHECK(slurp(dir / "split" / "checkpoint.vdck") == slurp(dir / "full" / "checkpoint.vdck"));
}

TEST_CASE("freeze_tts holds the tts parameters at their initial values") {
  fs::path dir = workspace("freeze");
  Corpus c = make_corpus(dir);
  write_file(dir / "train.cfg",
             train_config(c.clean_manifest, dir / "run", "freeze_tts = true\n"));
  CHECK(run("train --config " + (dir / "train.cfg").string(), dir) == 0);

  io::Checkpoint ck = io::read_checkpoint((dir / "run" / "checkpoint.vdck").string());
  pipeline::Pipeline fresh = pipeline::make_pipeline(
      pipeline::PipelineConfig::from_config(io::Config::parse_string(ck.config_text)));
  bool dit_changed = false;
  for (const auto& name : fresh.ps.names()) {
    const auto& trained = ck.params.at(name).data;
    if (name.rfind("tts.", 0) == 0) {
      CHECK(trained == fresh.ps.get(name).data());
    } else if (name.rfind("dit.", 0) == 0 && trained != fresh.ps.get(name).data()) {
      dit_changed = true;
    }
  }
  CHECK(dit_changed);
}

TEST_CASE("sample is deterministic and skipping zero-weight branches is exact") {
  fs::path dir = workspace("sample");
  Corpus c = make_corpus(dir);
  write_file(dir / "train.cfg", train_config(c.clean_manifest, dir / "run"));
  REQUIRE(run("train --config " + (dir / "train.cfg").string(), dir) == 0);
  std::string ck = (dir / "run" / "checkpoint.vdck").string();

  std::string base = "sample --checkpoint " + ck +
                     " --text \"go east\" --env-text \"street noise\" --steps 3 --seed 9 ";
  CHECK(run(base + "--out " + (dir / "s1.wav").string() + " --out-mel " +
                (dir / "s1.mel").string(),
            dir) == 0);
  CHECK(run(base + "--out " + (dir / "s2.wav").string() + " --out-mel " +
                (dir / "s2.mel").string(),
            dir) == 0);
  CHECK(slurp(dir / "s1.wav") == slurp(dir / "s2.wav"));
  CHECK(slurp(dir / "s1.mel") == slurp(dir / "s2.mel"));

  dsp::Waveform w = read_wav((dir / "s1.wav").string());
  CHECK(w.samples.size() > 100);
  io::TensorData mel = io::read_tensor_file((dir / "s1.mel").string());
  REQUIRE(mel.shape.size() == 2);
  CHECK(mel.shape[1] == 8);

  SUBCASE("another seed moves the output") {
    CHECK(run("sample --checkpoint " + ck +
                  " --text \"go east\" --env-text \"street noise\" --steps 3 --seed 10 " +
                  "--out-mel " + (dir / "s3.mel").string(),
              dir) == 0);
    CHECK(slurp(dir / "s3.mel") != slurp(dir / "s1.mel"));
  }

  SUBCASE("w-env 0 equals the all-branches path") {
    std::string common = "sample --checkpoint " + ck +
                         " --text \"go east\" --env-text \"street noise\" --steps 3 --seed 9 "
                         "--w-cont 5 --out-mel ";
    CHECK(run(common + (dir / "z.mel").string() + " --w-env 0", dir) == 0);
    CHECK(run(common + (dir / "t.mel").string() + " --w-env 1e-300", dir) == 0);
    io::TensorData a = io::read_tensor_file((dir / "z.mel").string());
    io::TensorData b = io::read_tensor_file((dir / "t.mel").string());
    REQUIRE(a.data.size() == b.data.size());
    double maxdiff = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i)
      maxdiff = std::max(maxdiff, std::abs(a.data[i] - b.data[i]));
    CHECK(maxdiff < 1e-6);
  }

  SUBCASE("environment sources are mutually exclusive") {
    CHECK(run("sample --checkpoint " + ck +
                  " --text hi --env-text a --env-audio b.wav --out " +
                  (dir / "x.wav").string(),
              dir) != 0);
  }

  SUBCASE("an audio environment works end to end") {
    CHECK(run("sample --checkpoint " + ck + " --text hi --env-audio " +
                  (dir / "noise" / "n0.wav").string() + " --steps 2 --out-mel " +
                  (dir / "ea.mel").string(),
              dir) == 0);
  }
}

TEST_CASE("translate maps a stored image embedding through an overfit prior") {
  fs::path dir = workspace("translate");

  embed::ProviderConfig pc;
  pc.dim = 8;
  embed::TranslatorConfig tc;
  tc.dim = 8;
  tc.hidden = 16;
  tc.blocks = 1;
  tc.heads = 2;
  tc.t_steps = 50;

  std::vector<Tensor> ys, z0s;
  for (int i = 0; i < 8; ++i) {
    ys.push_back(embed::toy_image_embed("scene" + std::to_string(i), pc).v);
    z0s.push_back(embed::toy_image_embed("target" + std::to_string(i), pc).v);
  }

  ParamStore ps;
  Rng init(3);
  embed::Translator tr = embed::make_translator(ps, "i2a.", tc, init);
  diffusion::NoiseSchedule sched = diffusion::NoiseSchedule::linear(tc.t_steps, 1e-4, 0.02);
  AdamW opt(AdamWConfig{});
  opt.config().lr = 3e-3;
  opt.config().weight_decay = 0.0;
  ps.set_all_trainable(true);
  Rng rng(17);
  for (int step = 0; step < 800; ++step) {
    ps.zero_grads();
    Tensor total = Tensor::scalar(0.0);
    for (int i = 0; i < 8; ++i) {
      int t = 1 + static_cast<int>(rng.uniform_int(tc.t_steps));
      Tensor eps = Tensor::zeros(z0s[i].shape());
      rng.fill_normal(eps.data());
      Tensor z_t = diffusion::q_sample(z0s[i], t, eps, sched);
      total = add(total, embed::i2a_loss(tr, z0s[i], ys[i], t, z_t));
    }
    backward(total);
    opt.step(ps);
  }

  io::Checkpoint ck;
  io::Config cfg;
  cfg.set("i2a_dim", "8");
  cfg.set("i2a_hidden", "16");
  cfg.set("i2a_blocks", "1");
  cfg.set("i2a_heads", "2");
  cfg.set("i2a_t_steps", "50");
  ck.config_text = cfg.serialize();
  io::store_params(ps, ck);
  io::write_checkpoint((dir / "i2a.vdck").string(), ck);

  int good = 0;
  for (int i = 0; i < 8; ++i) {
    fs::path in = dir / ("y" + std::to_string(i) + ".vdt");
    fs::path out = dir / ("z" + std::to_string(i) + ".vdt");
    io::write_tensor_file(in.string(), ys[i].shape(), ys[i].data());
    REQUIRE(run("translate --i2a-checkpoint " + (dir / "i2a.vdck").string() +
                    " --image-embedding-file " + in.string() + " --out-embedding-file " +
                    out.string() + " --seed 12",
                dir) == 0);
    io::TensorData z = io::read_tensor_file(out.string());
    REQUIRE(z.shape == Shape{8});
    double dot = 0.0, nz = 0.0, nt = 0.0;
    for (int j = 0; j < 8; ++j) {
      dot += z.data[j] * z0s[i].data()[j];
      nz += z.data[j] * z.data[j];
      nt += z0s[i].data()[j] * z0s[i].data()[j];
    }
    if (dot / std::sqrt(nz * nt) > 0.95) ++good;
  }
  CHECK(good == 8);

  SUBCASE("same seed reproduces the file, another seed does not") {
    std::string base = "translate --i2a-checkpoint " + (dir / "i2a.vdck").string() +
                       " --image-embedding-file " + (dir / "y0.vdt").string() +
                       " --out-embedding-file ";
    REQUIRE(run(base + (dir / "r1.vdt").string() + " --seed 12", dir) == 0);
    CHECK(slurp(dir / "r1.vdt") == slurp(dir / "z0.vdt"));
    REQUIRE(run(base + (dir / "r2.vdt").string() + " --seed 13", dir) == 0);
    CHECK(slurp(dir / "r2.vdt") != slurp(dir / "z0.vdt"));
  }

  SUBCASE("a wrong-sized embedding is rejected") {
    io::write_tensor_file((dir / "bad.vdt").string(), {9}, std::vector<double>(9, 0.1));
    CHECK(run("translate --i2a-checkpoint " + (dir / "i2a.vdck").string() +
                  " --image-embedding-file " + (dir / "bad.vdt").string() +
                  " --out-embedding-file " + (dir / "bad_out.vdt").string(),
              dir) != 0);
    CHECK(slurp(dir / "stderr.txt").find("dimension mismatch") != std::string::npos);
  }
}

TEST_CASE("eval writes a parseable report with the requested metrics") {
  fs::path dir = workspace("eval");
  fs::create_directories(dir / "gen");
  write_wav((dir / "gen" / "g0.wav").string(), tone(330.0, 0.06));
  write_wav((dir / "gen" / "g1.wav").string(), tone(550.0, 0.06));
  std::vector<ManifestEntry> gen(2);
  gen[0].id = "g0";
  gen[0].audio_path = "g0.wav";
  gen[0].transcript = "alpha beta gamma delta";
  gen[0].hypothesis_transcript = "alpha beta gamma delta";
  gen[0].env_caption = "rain on a roof";
  gen[1].id = "g1";
  gen[1].audio_path = "g1.wav";
  gen[1].transcript = "a b c d";
  gen[1].hypothesis_transcript = "a b c x";
  gen[1].env_caption = "rain on a roof";
  write_manifest((dir / "gen" / "manifest.jsonl").string(), gen);

  std::string gm = (dir / "gen" / "manifest.jsonl").string();
  CHECK(run("eval --gen-manifest " + gm + " --ref-manifest " + gm + " --out " +
                (dir / "report.txt").string(),
            dir) == 0);

  io::Config rep = io::Config::parse_string(slurp(dir / "report.txt"));
  CHECK(rep.get_double("fad", -1.0) < 1e-6);
  CHECK(rep.get_double("fad", -1.0) >= 0.0);
  CHECK(rep.get_string("fad_ridged", "") == "true");  // 2 rows < E+1
  double clap = rep.get_double("clap", -10.0);
  CHECK(clap >= -1.0 - 1e-12);
  CHECK(clap <= 1.0 + 1e-12);
  CHECK(rep.get_double("wer", -1.0) == doctest::Approx(1.0 / 8.0).epsilon(1e-12));
  CHECK(rep.get_int("wer_skipped", -1) == 0);
  CHECK(slurp(dir / "stdout.txt") == slurp(dir / "report.txt"));

  SUBCASE("identical transcripts give zero wer") {
    gen[1].hypothesis_transcript = gen[1].transcript;
    write_manifest(gm, gen);
    CHECK(run("eval --gen-manifest " + gm + " --metrics wer --out " +
                  (dir / "wer.txt").string(),
              dir) == 0);
    io::Config r2 = io::Config::parse_string(slurp(dir / "wer.txt"));
    CHECK(r2.get_double("wer", -1.0) == 0.0);
    CHECK(!r2.has("fad"));
    CHECK(!r2.has("clap"));
  }

  SUBCASE("unknown metrics are usage errors") {
    CHECK(run("eval --gen-manifest " + gm + " --metrics fad,volume", dir) != 0);
  }

  SUBCASE("fad without a reference is an error") {
    CHECK(run("eval --gen-manifest " + gm + " --metrics fad", dir) != 0);
    CHECK(slurp(dir / "stderr.txt").find("ref-manifest") != std::string::npos);
  }
}
