#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "tinyclap/audio.hpp"
#include "tinyclap/dataset.hpp"
#include "tinyclap/distill.hpp"
#include "tinyclap/errors.hpp"
#include "tinyclap/hash.hpp"
#include "tinyclap/io_util.hpp"
#include "tinyclap/prune.hpp"
#include "tinyclap/store.hpp"
#include "tinyclap/synthetic.hpp"
#include "tinyclap/zeroshot.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace tinyclap;

namespace {

struct GlobalOptions {
  std::uint64_t seed = 0;
  int threads = 1;
  std::string log_level;
};

struct ArchOptions {
  std::string preset;
  std::optional<double> alpha, beta;
  std::optional<int> t0, n_blocks;
  std::optional<Index> latent_dim;

  void add(CLI::App* cmd) {
    cmd->add_option("--preset", preset, "Named architecture (phinet_1 ... phinet_7, tiny, micro)");
    cmd->add_option("--alpha", alpha, "Width multiplier");
    cmd->add_option("--beta", beta, "Expansion decay");
    cmd->add_option("--t0", t0, "Base expansion factor");
    cmd->add_option("--n-blocks", n_blocks, "Number of inverted-residual blocks");
  }

  /// Preset values overridden by any explicit flag.
  PhiNetConfig resolve() const {
    const bool custom = alpha || beta || t0 || n_blocks;
    if (preset.empty() && !custom) throw ContractError("give --preset or the architecture flags --alpha --beta --t0 --n-blocks");
    PhiNetConfig c = preset.empty() ? PhiNetConfig{} : tinyclap::preset(preset);
    if (alpha) c.alpha = *alpha;
    if (beta) c.beta = *beta;
    if (t0) c.t_zero = *t0;
    if (n_blocks) c.depth_n = *n_blocks;
    if (latent_dim) c.latent_dim = *latent_dim;
    c.validate();
    return c;
  }

  std::string preset_name() const { return (alpha || beta || t0 || n_blocks) ? std::string() : preset; }
};

void log_config(const std::string& command, const GlobalOptions& g, json args) {
  args["command"] = command;
  args["seed"] = g.seed;
  args["threads"] = g.threads;
  spdlog::info("config {}", args.dump());
}

AudioClip load_clip(const fs::path& path) {
  AudioClip clip = read_wav(path);
  return clip.sample_rate == kModelSampleRate ? clip : resample(clip, kModelSampleRate);
}

MelSpectrogram clip_features(const fs::path& path, const FrontendSettings& frontend, double crop_seconds) {
  const MelFrontend fe(frontend);
  return prepare_mel(center_crop(load_clip(path), crop_seconds), fe);
}

std::vector<std::string> split_labels(const std::string& text) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = text.find(',', start);
    out.push_back(text.substr(start, comma == std::string::npos ? std::string::npos : comma - start));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

fs::path sibling(const fs::path& path, const std::string& suffix) {
  fs::path out = path;
  out.replace_extension();
  out += suffix;
  return out;
}

void check_threads(const GlobalOptions& g) {
  if (g.threads < 1) throw ContractError("--threads must be >= 1, got " + std::to_string(g.threads));
}

}  // namespace

int run(int argc, char** argv) {
  CLI::App app{"Distill, prune and evaluate compact audio encoders for zero-shot classification", "tinyclap"};
  app.require_subcommand(1);
  GlobalOptions g;
  app.add_option("--seed", g.seed, "Seed for initialization, shuffling and cropping")->capture_default_str();
  app.add_option("--threads", g.threads, "Preprocessing workers")->capture_default_str();
  app.add_option("--log-level", g.log_level, "trace, debug, info, warn, error, critical or off (default: $TINYCLAP_LOG or info)");

  // distill
  auto* distill_cmd = app.add_subcommand("distill", "Train a student against a frozen teacher");
  std::string d_manifest, d_holdout, d_teacher, d_teacher_ckpt, d_out, d_report;
  ArchOptions d_arch;
  DistillConfig d_cfg;
  distill_cmd->add_option("--manifest", d_manifest, "Training manifest (JSON lines)")->required();
  distill_cmd->add_option("--holdout", d_holdout, "Held-out manifest reported every epoch");
  auto* teacher_opt = distill_cmd->add_option("--teacher", d_teacher, "Teacher projections keyed by sample id (.temb)");
  auto* teacher_ckpt_opt = distill_cmd->add_option("--teacher-ckpt", d_teacher_ckpt, "Teacher encoder checkpoint (.tclp)");
  teacher_opt->excludes(teacher_ckpt_opt);
  d_arch.add(distill_cmd);
  distill_cmd->add_option("--out", d_out, "Student checkpoint to write")->required();
  distill_cmd->add_option("--report", d_report, "Per-epoch CSV (default: <out>.report.csv)");
  distill_cmd->add_option("--epochs", d_cfg.epochs_stage1, "Stage-1 epochs")->capture_default_str();
  distill_cmd->add_option("--epochs-stage2", d_cfg.epochs_stage2, "Projection-only epochs")->capture_default_str();
  distill_cmd->add_option("--lr", d_cfg.lr_stage1, "Stage-1 learning rate")->capture_default_str();
  distill_cmd->add_option("--lr-stage2", d_cfg.lr_stage2, "Stage-2 learning rate")->capture_default_str();
  distill_cmd->add_option("--batch", d_cfg.batch_size, "Batch size")->capture_default_str();
  distill_cmd->add_option("--crop-seconds", d_cfg.crop_seconds, "Random crop length")->capture_default_str();
  distill_cmd->add_flag("--freeze-norm-stats", d_cfg.freeze_norm_stats, "Train with running normalization statistics");

  // rank
  auto* rank_cmd = app.add_subcommand("rank", "Rank latent dimensions by mean absolute projection");
  std::string r_ckpt, r_manifest, r_out;
  InferenceOptions r_inf;
  rank_cmd->add_option("--ckpt", r_ckpt, "Student checkpoint")->required();
  rank_cmd->add_option("--manifest", r_manifest, "Audio used to estimate importance")->required();
  rank_cmd->add_option("--out", r_out, "Ranking JSON to write")->required();
  rank_cmd->add_option("--crop-seconds", r_inf.crop_seconds, "Center crop length")->capture_default_str();
  rank_cmd->add_option("--batch", r_inf.batch_size, "Inference batch size")->capture_default_str();

  // prune
  auto* prune_cmd = app.add_subcommand("prune", "Keep the top-r latent dimensions of a checkpoint");
  std::string p_ckpt, p_ranking, p_out;
  Index p_r = 0;
  prune_cmd->add_option("--ckpt", p_ckpt, "Student checkpoint")->required();
  prune_cmd->add_option("--ranking", p_ranking, "Ranking JSON")->required();
  prune_cmd->add_option("--r", p_r, "Dimensions to keep")->required();
  prune_cmd->add_option("--out", p_out, "Pruned checkpoint to write")->required();

  // embed
  auto* embed_cmd = app.add_subcommand("embed", "Project audio into the latent space");
  std::string e_ckpt, e_audio, e_manifest, e_out;
  InferenceOptions e_inf;
  embed_cmd->add_option("--ckpt", e_ckpt, "Encoder checkpoint")->required();
  auto* audio_opt = embed_cmd->add_option("--audio", e_audio, "WAV file");
  auto* manifest_opt = embed_cmd->add_option("--manifest", e_manifest, "Manifest; every sample is embedded");
  audio_opt->excludes(manifest_opt);
  embed_cmd->add_option("--out", e_out, "Embedding file to write (.temb)");
  embed_cmd->add_option("--crop-seconds", e_inf.crop_seconds, "Center crop length")->capture_default_str();
  embed_cmd->add_option("--batch", e_inf.batch_size, "Inference batch size")->capture_default_str();

  // classify
  auto* classify_cmd = app.add_subcommand("classify", "Zero-shot classify one clip");
  std::string c_ckpt, c_classes, c_audio, c_ranking;
  std::optional<Index> c_r;
  double c_tau = 1.0, c_crop = 5.0;
  classify_cmd->add_option("--ckpt", c_ckpt, "Encoder checkpoint")->required();
  classify_cmd->add_option("--classes", c_classes, "Class embeddings (.temb, ids are labels)")->required();
  classify_cmd->add_option("--audio", c_audio, "WAV file")->required();
  classify_cmd->add_option("--r", c_r, "Latent dimensions to use");
  classify_cmd->add_option("--ranking", c_ranking, "Ranking JSON, needed for r < d on an unpruned checkpoint");
  classify_cmd->add_option("--tau", c_tau, "Softmax temperature")->capture_default_str();
  classify_cmd->add_option("--crop-seconds", c_crop, "Center crop length")->capture_default_str();

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "Zero-shot accuracy on a labeled manifest");
  std::string v_ckpt, v_classes, v_manifest, v_ranking, v_out, v_confusion;
  std::vector<Index> v_r;
  EvalOptions v_opts;
  eval_cmd->add_option("--ckpt", v_ckpt, "Encoder checkpoint")->required();
  eval_cmd->add_option("--classes", v_classes, "Class embeddings (.temb)")->required();
  eval_cmd->add_option("--manifest", v_manifest, "Labeled test manifest")->required();
  eval_cmd->add_option("--r", v_r, "Latent dimensions to evaluate (repeatable)");
  eval_cmd->add_option("--ranking", v_ranking, "Ranking JSON, needed for r < d on an unpruned checkpoint");
  eval_cmd->add_option("--tau", v_opts.tau, "Softmax temperature")->capture_default_str();
  eval_cmd->add_option("--out", v_out, "Results CSV (r, accuracy, params, correct, total)")->required();
  eval_cmd->add_option("--confusion", v_confusion, "Confusion CSV for the first r (default: <out>.confusion.csv)");
  eval_cmd->add_option("--crop-seconds", v_opts.inference.crop_seconds, "Center crop length")->capture_default_str();
  eval_cmd->add_option("--batch", v_opts.inference.batch_size, "Inference batch size")->capture_default_str();

  // captions
  auto* captions_cmd = app.add_subcommand("captions", "Print caption text for class labels");
  std::string k_labels;
  captions_cmd->add_option("--labels", k_labels, "Comma-separated labels")->required();

  // init
  auto* init_cmd = app.add_subcommand("init", "Write a randomly initialized checkpoint");
  ArchOptions i_arch;
  std::string i_out;
  i_arch.add(init_cmd);
  init_cmd->add_option("--latent-dim", i_arch.latent_dim, "Output dimension d");
  init_cmd->add_option("--out", i_out, "Checkpoint to write")->required();

  // synth
  auto* synth_cmd = app.add_subcommand("synth", "Write a synthetic corpus");
  std::string s_kind = "tones", s_dir;
  std::size_t s_count = 64, s_train = 16, s_test = 25;
  double s_seconds = 1.5;
  synth_cmd->add_option("--kind", s_kind, "tones (labeled train/test) or mixture (unlabeled)")
      ->check(CLI::IsMember({"tones", "mixture"}))
      ->capture_default_str();
  synth_cmd->add_option("--out-dir", s_dir, "Output directory")->required();
  synth_cmd->add_option("--count", s_count, "Clips for --kind mixture")->capture_default_str();
  synth_cmd->add_option("--train-per-class", s_train, "Training clips per class")->capture_default_str();
  synth_cmd->add_option("--test-per-class", s_test, "Test clips per class")->capture_default_str();
  synth_cmd->add_option("--seconds", s_seconds, "Clip length")->capture_default_str();

  // prototypes
  auto* proto_cmd = app.add_subcommand("prototypes", "Class embeddings as mean teacher projections per label");
  std::string o_ckpt, o_manifest, o_out;
  InferenceOptions o_inf;
  proto_cmd->add_option("--ckpt", o_ckpt, "Teacher checkpoint")->required();
  proto_cmd->add_option("--manifest", o_manifest, "Labeled manifest")->required();
  proto_cmd->add_option("--out", o_out, "Class embeddings to write (.temb)")->required();
  proto_cmd->add_option("--crop-seconds", o_inf.crop_seconds, "Center crop length")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  std::string level = g.log_level;
  if (level.empty()) {
    const char* env = std::getenv("TINYCLAP_LOG");
    level = env ? env : "info";
  }
  auto logger = spdlog::stderr_color_mt("tinyclap");
  spdlog::set_default_logger(logger);
  const auto parsed_level = spdlog::level::from_str(level);
  if (parsed_level == spdlog::level::off && level != "off") throw ContractError("unknown log level '" + level + "'");
  spdlog::set_level(parsed_level);
  check_threads(g);

  if (*distill_cmd) {
    d_cfg.seed = g.seed;
    d_cfg.threads = g.threads;
    if (d_teacher.empty() && d_teacher_ckpt.empty()) throw ContractError("distill needs --teacher or --teacher-ckpt");
    d_cfg.validate();
    const AudioDataset train = load_dataset(fs::path(d_manifest), g.threads);
    std::optional<AudioDataset> holdout;
    if (!d_holdout.empty()) holdout = load_dataset(fs::path(d_holdout), g.threads);

    std::unique_ptr<TeacherProvider<float>> teacher;
    std::string teacher_source;
    if (!d_teacher.empty()) {
      teacher = std::make_unique<EmbeddingTableTeacher<float>>(read_embeddings(d_teacher));
      teacher_source = d_teacher;
    } else {
      teacher = std::make_unique<EncoderTeacher<float>>(load_checkpoint(d_teacher_ckpt).encoder);
      teacher_source = d_teacher_ckpt;
    }
    d_arch.latent_dim = teacher->dim();
    const PhiNetConfig arch = d_arch.resolve();
    log_config("distill", g,
               {{"manifest", d_manifest}, {"holdout", d_holdout}, {"teacher", teacher_source},
                {"architecture", arch}, {"preset", d_arch.preset_name()}, {"training", d_cfg}, {"out", d_out}});

    StudentEncoder student = StudentEncoder::build(arch, g.seed);
    spdlog::info("student parameters: {}", student.parameter_count());
    TrainInputs inputs{&train, holdout ? &*holdout : nullptr, [](const EpochRecord& r) {
                         if (r.has_holdout)
                           spdlog::info("epoch {} stage {} loss {:.6f} holdout cosine {:.6f} ({:.2f}s)", r.epoch,
                                        r.stage, r.train_loss, r.holdout_cosine, r.seconds);
                         else
                           spdlog::info("epoch {} stage {} loss {:.6f} ({:.2f}s)", r.epoch, r.stage, r.train_loss,
                                        r.seconds);
                       }};
    const TrainReport report = distill(student, inputs, *teacher, d_cfg);
    CheckpointMeta meta;
    meta.preset = d_arch.preset_name();
    meta.frontend = d_cfg.frontend;
    save_checkpoint(student, meta, d_out);
    const fs::path report_path = d_report.empty() ? sibling(d_out, ".report.csv") : fs::path(d_report);
    write_text_atomic(report_path, report.to_csv());
    spdlog::info("wrote {} and {}", d_out, report_path.string());
    return 0;
  }

  if (*rank_cmd) {
    r_inf.threads = g.threads;
    log_config("rank", g, {{"ckpt", r_ckpt}, {"manifest", r_manifest}, {"out", r_out},
                           {"crop_seconds", r_inf.crop_seconds}, {"batch", r_inf.batch_size}});
    const LoadedCheckpoint ckpt = load_checkpoint(r_ckpt);
    const AudioDataset data = load_dataset(fs::path(r_manifest), g.threads);
    const PruneRanking ranking = rank_latents(ckpt.encoder, data, ckpt.meta.frontend, r_inf);
    save_ranking(r_out, ranking);
    spdlog::info("ranked {} dimensions over {} clips", ranking.dim(), data.size());
    return 0;
  }

  if (*prune_cmd) {
    log_config("prune", g, {{"ckpt", p_ckpt}, {"ranking", p_ranking}, {"r", p_r}, {"out", p_out}});
    const LoadedCheckpoint ckpt = load_checkpoint(p_ckpt);
    const PruneRanking ranking = load_ranking(p_ranking);
    const StudentEncoder pruned = prune_checkpoint(ckpt.encoder, ranking, p_r);
    CheckpointMeta meta = ckpt.meta;
    meta.ranking_fingerprint = ranking.fingerprint();
    save_checkpoint(pruned, meta, p_out);
    spdlog::info("kept {} of {} dimensions", p_r, ranking.dim());
    return 0;
  }

  if (*embed_cmd) {
    e_inf.threads = g.threads;
    if (e_audio.empty() && e_manifest.empty()) throw ContractError("embed needs --audio or --manifest");
    log_config("embed", g, {{"ckpt", e_ckpt}, {"audio", e_audio}, {"manifest", e_manifest}, {"out", e_out},
                            {"crop_seconds", e_inf.crop_seconds}});
    const LoadedCheckpoint ckpt = load_checkpoint(e_ckpt);
    EmbeddingTable table{ckpt.encoder.output_dim(), {}};
    if (!e_audio.empty()) {
      const LatentVector v = embed(ckpt.encoder, clip_features(e_audio, ckpt.meta.frontend, e_inf.crop_seconds));
      table.records.push_back({fs::path(e_audio).stem().string(), v.values});
    } else {
      const AudioDataset data = load_dataset(fs::path(e_manifest), g.threads);
      const Eigen::MatrixXf proj = project_dataset(ckpt.encoder, data, ckpt.meta.frontend, e_inf);
      for (std::size_t i = 0; i < data.size(); ++i) {
        Eigen::VectorXf v = proj.row(static_cast<Index>(i)).transpose();
        const float n = v.norm();
        if (n > 0.f) v /= n;
        table.records.push_back({data.items[i].id, v});
      }
    }
    if (!e_out.empty()) {
      write_embeddings(e_out, table);
    } else {
      json out = json::array();
      for (const EmbeddingRecord& r : table.records)
        out.push_back({{"id", r.id}, {"embedding", std::vector<float>(r.vector.data(), r.vector.data() + r.vector.size())}});
      std::cout << out.dump() << "\n";
    }
    return 0;
  }

  if (*classify_cmd) {
    log_config("classify", g, {{"ckpt", c_ckpt}, {"classes", c_classes}, {"audio", c_audio}, {"ranking", c_ranking},
                               {"r", c_r ? json(*c_r) : json()}, {"tau", c_tau}, {"crop_seconds", c_crop}});
    const LoadedCheckpoint ckpt = load_checkpoint(c_ckpt);
    const ClassEmbeddingSet classes = ClassEmbeddingSet::from_table(read_embeddings(c_classes));
    std::optional<PruneRanking> ranking;
    if (!c_ranking.empty()) ranking = load_ranking(c_ranking);
    const LatentSelection selection = selection_for(ckpt.encoder, ranking ? &*ranking : nullptr, c_r);
    const Eigen::MatrixXf proj =
        project_batch(ckpt.encoder, std::span<const MelSpectrogram>(
                                        std::vector{clip_features(c_audio, ckpt.meta.frontend, c_crop)}));
    const Prediction p = classify(proj.row(0).transpose(), classes, selection, c_tau);
    const json out = {{"label", p.predicted_label},
                      {"labels", classes.labels},
                      {"probabilities", p.probabilities},
                      {"r", selection.r()}};
    std::cout << out.dump() << "\n";
    return 0;
  }

  if (*eval_cmd) {
    v_opts.inference.threads = g.threads;
    log_config("eval", g, {{"ckpt", v_ckpt}, {"classes", v_classes}, {"manifest", v_manifest}, {"ranking", v_ranking},
                           {"r", v_r}, {"tau", v_opts.tau}, {"out", v_out},
                           {"crop_seconds", v_opts.inference.crop_seconds}});
    const LoadedCheckpoint ckpt = load_checkpoint(v_ckpt);
    const ClassEmbeddingSet classes = ClassEmbeddingSet::from_table(read_embeddings(v_classes));
    std::optional<PruneRanking> ranking;
    if (!v_ranking.empty()) ranking = load_ranking(v_ranking);
    const AudioDataset test = load_dataset(fs::path(v_manifest), g.threads);
    const std::vector<EvalResult> results =
        evaluate(ckpt.encoder, test, classes, ranking ? &*ranking : nullptr, v_r, ckpt.meta.frontend, v_opts);
    const std::string csv = results_csv(results);
    write_text_atomic(v_out, csv);
    const fs::path confusion_path = v_confusion.empty() ? sibling(v_out, ".confusion.csv") : fs::path(v_confusion);
    write_text_atomic(confusion_path, confusion_csv(results.front()));
    for (const EvalResult& r : results)
      spdlog::info("r {} accuracy {:.4f} ({}/{}) params {}", r.r, r.accuracy, r.correct, r.total, r.params);
    std::cout << csv;
    return 0;
  }

  if (*captions_cmd) {
    log_config("captions", g, {{"labels", k_labels}});
    for (const std::string& label : split_labels(k_labels)) std::cout << build_caption(label) << "\n";
    return 0;
  }

  if (*init_cmd) {
    const PhiNetConfig arch = i_arch.resolve();
    log_config("init", g, {{"architecture", arch}, {"preset", i_arch.preset_name()}, {"out", i_out}});
    const StudentEncoder enc = StudentEncoder::build(arch, g.seed);
    CheckpointMeta meta;
    meta.preset = i_arch.preset_name();
    save_checkpoint(enc, meta, i_out);
    spdlog::info("parameters: {}", enc.parameter_count());
    return 0;
  }

  if (*synth_cmd) {
    log_config("synth", g, {{"kind", s_kind}, {"out_dir", s_dir}, {"count", s_count}, {"train_per_class", s_train},
                            {"test_per_class", s_test}, {"seconds", s_seconds}});
    if (s_kind == "mixture") {
      write_dataset(make_mixture_corpus(s_count, g.seed, s_seconds), s_dir, "manifest.jsonl");
    } else {
      const LabeledCorpus corpus = make_tone_corpus(s_train, s_test, g.seed, s_seconds);
      write_dataset(corpus.train, s_dir, "train.jsonl");
      write_dataset(corpus.test, s_dir, "test.jsonl");
    }
    return 0;
  }

  if (*proto_cmd) {
    o_inf.threads = g.threads;
    log_config("prototypes", g, {{"ckpt", o_ckpt}, {"manifest", o_manifest}, {"out", o_out},
                                 {"crop_seconds", o_inf.crop_seconds}});
    const LoadedCheckpoint ckpt = load_checkpoint(o_ckpt);
    const AudioDataset data = load_dataset(fs::path(o_manifest), g.threads);
    std::vector<std::string> labels;
    for (const AudioItem& item : data.items) {
      if (!item.label) throw DataError("sample '" + item.id + "' has no label");
      if (std::find(labels.begin(), labels.end(), *item.label) == labels.end()) labels.push_back(*item.label);
    }
    write_embeddings(o_out, prototype_classes(ckpt.encoder, data, labels, ckpt.meta.frontend, o_inf).to_table());
    return 0;
  }
  return 2;
}

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
