#include <doctest.h>

#include <cmath>

#include <nlohmann/json.hpp>

#include "test_support.hpp"
#include "tinyclap/audio.hpp"
#include "tinyclap/io_util.hpp"
#include "tinyclap/prune.hpp"
#include "tinyclap/store.hpp"
#include "tinyclap/synthetic.hpp"

using namespace tinyclap;
using namespace tinyclap::testing;
using nlohmann::json;

namespace {

std::string cli(const std::string& args) { return std::string("'") + TINYCLAP_CLI + "' " + args; }

std::string q(const std::filesystem::path& p) { return "'" + p.string() + "'"; }

AudioClip tone(double hz, double seconds) {
  AudioClip clip;
  clip.samples.resize(crop_length(seconds, kModelSampleRate));
  for (std::size_t i = 0; i < clip.samples.size(); ++i)
    clip.samples[i] = static_cast<float>(0.5 * std::sin(2.0 * M_PI * hz * static_cast<double>(i) / kModelSampleRate));
  return clip;
}

/// Encoder whose projection is the constant [1, 0] for every input.
StudentEncoder one_hot_encoder() {
  PhiNetConfig c = preset("tiny");
  c.latent_dim = 2;
  StudentEncoder enc = StudentEncoder::build(c, 1);
  for (auto& [name, t] : enc.named_tensors()) {
    if (name == "projection.weight") t->data().setZero();
    if (name == "projection.bias") t->data() << 1.f, 0.f;
  }
  return enc;
}

void write_one_hot_fixture(const TempDir& dir) {
  save_checkpoint(one_hot_encoder(), CheckpointMeta{}, dir / "onehot.tclp");
  write_embeddings(dir / "classes.temb",
                   EmbeddingTable{2, {{"A", Eigen::Vector2f(1.f, 0.f)}, {"B", Eigen::Vector2f(0.f, 1.f)}}});
  write_wav(dir / "tone.wav", tone(440.0, 0.5));
}

}  // namespace

TEST_CASE("classify prints the softmax over the one-hot fixture") {
  TempDir dir("cli_classify");
  write_one_hot_fixture(dir);
  const CommandResult r = run_command(cli("classify --ckpt " + q(dir / "onehot.tclp") + " --classes " +
                                          q(dir / "classes.temb") + " --audio " + q(dir / "tone.wav") +
                                          " --crop-seconds 0.5"),
                                      dir.path());
  REQUIRE(r.exit_code == 0);
  const json out = json::parse(r.out);
  CHECK(out["label"] == "A");
  CHECK(out["probabilities"][0].get<double>() == doctest::Approx(0.7311).epsilon(1e-4));
  CHECK(out["probabilities"][1].get<double>() == doctest::Approx(0.2689).epsilon(1e-4));
  CHECK(r.err.find("\"command\":\"classify\"") != std::string::npos);
}

TEST_CASE("captions prints one caption per label") {
  TempDir dir("cli_captions");
  const CommandResult r = run_command(cli("captions --labels 'dog bark,rain'"), dir.path());
  CHECK(r.exit_code == 0);
  CHECK(r.out == "this is the sound of dog bark\nthis is the sound of rain\n");
}

TEST_CASE("argument errors exit with 2") {
  TempDir dir("cli_args");
  CHECK(run_command(cli("classify --bogus 1"), dir.path()).exit_code == 2);
  CHECK(run_command(cli(""), dir.path()).exit_code == 2);
  CHECK(run_command(cli("--log-level nonsense captions --labels a"), dir.path()).exit_code == 2);
  CHECK(run_command(cli("captions --labels a,,b"), dir.path()).exit_code == 2);
  CHECK(run_command(cli("--help"), dir.path()).exit_code == 0);

  const StudentEncoder enc = StudentEncoder::build(preset("tiny"), 1);
  save_checkpoint(enc, CheckpointMeta{}, dir / "s.tclp");
  save_ranking(dir / "ranking.json", rank_latents(enc, make_mixture_corpus(2, 1, 0.4), FrontendSettings{}, {0.3, 2, 1}));
  const CommandResult r = run_command(
      cli("prune --ckpt " + q(dir / "s.tclp") + " --ranking " + q(dir / "ranking.json") + " --r 0 --out " +
          q(dir / "p.tclp")),
      dir.path());
  CHECK(r.exit_code == 2);
  CHECK(r.err.find("[1, 8]") != std::string::npos);
  CHECK(!std::filesystem::exists(dir / "p.tclp"));
  CHECK(run_command(cli("prune --ckpt " + q(dir / "s.tclp") + " --ranking " + q(dir / "ranking.json") +
                        " --r 3 --out " + q(dir / "p.tclp")),
                    dir.path())
            .exit_code == 0);
  CHECK(load_checkpoint(dir / "p.tclp").encoder.output_dim() == 3);
}

TEST_CASE("corrupted files exit with 3") {
  TempDir dir("cli_format");
  write_one_hot_fixture(dir);
  const std::string bytes = slurp(dir / "onehot.tclp");
  write_text_atomic(dir / "trunc.tclp", bytes.substr(0, bytes.size() - 3));
  std::string flipped = bytes;
  flipped[flipped.size() - 1] = static_cast<char>(flipped.back() ^ 0x40);
  write_text_atomic(dir / "flip.tclp", flipped);
  write_text_atomic(dir / "bad.temb", "TEMB\x01");
  const std::string tail = " --audio " + q(dir / "tone.wav") + " --crop-seconds 0.5";
  CHECK(run_command(cli("classify --ckpt " + q(dir / "trunc.tclp") + " --classes " + q(dir / "classes.temb") + tail),
                    dir.path())
            .exit_code == 3);
  CHECK(run_command(cli("classify --ckpt " + q(dir / "flip.tclp") + " --classes " + q(dir / "classes.temb") + tail),
                    dir.path())
            .exit_code == 3);
  CHECK(run_command(cli("classify --ckpt " + q(dir / "onehot.tclp") + " --classes " + q(dir / "bad.temb") + tail),
                    dir.path())
            .exit_code == 3);
  write_text_atomic(dir / "bad.wav", "RIFF0000WAVE");
  CHECK(run_command(cli("classify --ckpt " + q(dir / "onehot.tclp") + " --classes " + q(dir / "classes.temb") +
                        " --audio " + q(dir / "bad.wav")),
                    dir.path())
            .exit_code == 3);
}

TEST_CASE("non-finite audio exits with 4") {
  TempDir dir("cli_numeric");
  write_one_hot_fixture(dir);
  AudioClip clip = tone(440.0, 0.5);
  clip.samples[100] = std::numeric_limits<float>::quiet_NaN();
  write_wav(dir / "nan.wav", clip);
  const CommandResult r = run_command(cli("classify --ckpt " + q(dir / "onehot.tclp") + " --classes " +
                                          q(dir / "classes.temb") + " --audio " + q(dir / "nan.wav") +
                                          " --crop-seconds 0.5"),
                                      dir.path());
  CHECK(r.exit_code == 4);
}

TEST_CASE("missing teacher ids and unknown labels exit with 5") {
  TempDir dir("cli_data");
  write_dataset(make_mixture_corpus(3, 1, 0.4), dir.path(), "m.jsonl");
  write_embeddings(dir / "t.temb", EmbeddingTable{8, {{"clip_000", Eigen::VectorXf::Ones(8)},
                                                      {"clip_001", Eigen::VectorXf::Ones(8)}}});
  const CommandResult r = run_command(cli("distill --manifest " + q(dir / "m.jsonl") + " --teacher " +
                                          q(dir / "t.temb") + " --preset tiny --out " + q(dir / "s.tclp") +
                                          " --epochs 1 --epochs-stage2 0 --crop-seconds 0.3"),
                                      dir.path());
  CHECK(r.exit_code == 5);
  CHECK(r.err.find("clip_002") != std::string::npos);

  const LabeledCorpus corpus = make_tone_corpus(1, 1, 2, 0.4);
  write_dataset(corpus.test, dir.path(), "test.jsonl");
  save_checkpoint(StudentEncoder::build(preset("tiny"), 1), CheckpointMeta{}, dir / "s.tclp");
  write_embeddings(dir / "c.temb", EmbeddingTable{8, {{"hum", Eigen::VectorXf::Ones(8)}}});
  const CommandResult e = run_command(cli("eval --ckpt " + q(dir / "s.tclp") + " --classes " + q(dir / "c.temb") +
                                          " --manifest " + q(dir / "test.jsonl") + " --out " +
                                          q(dir / "r.csv") + " --crop-seconds 0.3"),
                                      dir.path());
  CHECK(e.exit_code == 5);
  CHECK(e.err.find("'whistle'") != std::string::npos);
}

TEST_CASE("the pipeline runs end to end and is deterministic") {
  TempDir dir("cli_pipeline");
  const std::string d = q(dir.path());
  auto ok = [&](const std::string& args) {
    const CommandResult r = run_command(cli(args), dir.path());
    INFO(args << "\n" << r.err);
    REQUIRE(r.exit_code == 0);
    return r;
  };
  const auto p = [&](const std::string& name) { return q(dir / name); };
  ok("--seed 3 synth --out-dir " + d + " --train-per-class 3 --test-per-class 2 --seconds 0.6");
  ok("--seed 1000 init --preset tiny --latent-dim 8 --out " + p("teacher.tclp"));
  ok("prototypes --ckpt " + p("teacher.tclp") + " --manifest " + p("train.jsonl") + " --out " + p("classes.temb") +
     " --crop-seconds 0.4");
  const std::string distill = " distill --manifest " + p("train.jsonl") + " --holdout " + p("test.jsonl") +
                              " --teacher-ckpt " + p("teacher.tclp") +
                              " --preset tiny --epochs 2 --epochs-stage2 1 --batch 4 --crop-seconds 0.4 --out ";
  ok("--seed 1 --threads 1" + distill + p("a.tclp"));
  ok("--seed 1 --threads 3" + distill + p("b.tclp"));
  CHECK(slurp(dir / "a.tclp") == slurp(dir / "b.tclp"));
  const std::string report = slurp(dir / "a.report.csv");
  CHECK(report.rfind("epoch,split,loss,mean_cosine,seconds\n1,train,", 0) == 0);
  CHECK(std::count(report.begin(), report.end(), '\n') == 7);

  ok("rank --ckpt " + p("a.tclp") + " --manifest " + p("train.jsonl") + " --out " + p("ranking.json") +
     " --crop-seconds 0.4");
  ok("prune --ckpt " + p("a.tclp") + " --ranking " + p("ranking.json") + " --r 4 --out " + p("a4.tclp"));
  const CommandResult full = ok("eval --ckpt " + p("a.tclp") + " --classes " + p("classes.temb") + " --manifest " +
                                p("test.jsonl") + " --ranking " + p("ranking.json") +
                                " --r 8 --r 4 --crop-seconds 0.4 --out " + p("results.csv"));
  CHECK(full.out == slurp(dir / "results.csv"));
  CHECK(full.out.rfind("r,accuracy,params,correct,total\n8,", 0) == 0);
  CHECK(slurp(dir / "results.confusion.csv").rfind("true,hum,whistle,chirp,static\n", 0) == 0);

  const CommandResult pruned = ok("eval --ckpt " + p("a4.tclp") + " --classes " + p("classes.temb") +
                                  " --manifest " + p("test.jsonl") + " --crop-seconds 0.4 --out " + p("pruned.csv"));
  const auto row_of = [](const std::string& csv, std::size_t line) {
    std::istringstream in(csv);
    std::string s;
    for (std::size_t i = 0; i <= line; ++i) std::getline(in, s);
    return s;
  };
  CHECK(row_of(pruned.out, 1) == row_of(full.out, 2));

  const CommandResult emb = ok("embed --ckpt " + p("a4.tclp") + " --audio " + q(dir / "audio" / "hum_test_000.wav") +
                               " --crop-seconds 0.4");
  const json e = json::parse(emb.out);
  CHECK(e[0]["id"] == "hum_test_000");
  CHECK(e[0]["embedding"].size() == 4);
  ok("embed --ckpt " + p("a.tclp") + " --manifest " + p("test.jsonl") + " --crop-seconds 0.4 --out " + p("t.temb"));
  const EmbeddingTable table = read_embeddings(dir / "t.temb");
  CHECK(table.records.size() == 8);
  CHECK(table.records[0].vector.norm() == doctest::Approx(1.0f).epsilon(1e-5));
}
