// whilter: train, fine-tune, evaluate and apply the five-class data filter.
//
// Every option can also come from an INI file given with --config; sections
// are named after subcommands ([train], [eval], ...) and keys after long
// option names. Flags on the command line win over the file.
//
// Exit status: 0 success, 1 data error, 2 configuration error.

#include <cstdio>
#include <string>

#include <CLI11.hpp>

#include "whilter/commands.hpp"

namespace {

using namespace whilter;

struct ModelFlags {
  std::string thresholds;
  std::string backend = "mock";
  bool no_positional = false;
  bool no_mix_speech = false, no_mix_noise = false, no_mix_music = false;
  double p_augment = -1.0;  // < 0: keep per-augmentation defaults
};

void add_run_options(CLI::App* cmd, TrainOptions& o, ModelFlags& f) {
  RunConfig& r = o.run;
  cmd->add_option("--manifest", o.manifest, "JSONL manifest (train and val splits are used)")->required();
  cmd->add_option("--out", o.out_dir, "Output directory for checkpoints and logs")->required();
  cmd->add_option("--seed", r.seed, "Run seed")->capture_default_str();
  cmd->add_option("--epochs", r.epochs, "Number of epochs")->capture_default_str();
  cmd->add_option("--eta", r.eta, "Initial learning rate")->capture_default_str();
  cmd->add_option("--gamma", r.gamma, "Per-epoch learning-rate decay")->capture_default_str();
  cmd->add_option("--samples-per-epoch", r.samples_per_epoch, "Weighted draws per epoch")->capture_default_str();
  cmd->add_option("--batch-size", r.batch_size, "Batch size")->capture_default_str();
  cmd->add_option("--thresholds", f.thresholds, "Validation thresholds: 0.5 or class=value,...");
  cmd->add_option("--backend", f.backend, "Feature backend: mock or file")->capture_default_str();
  cmd->add_flag("--resume", r.resume, "Continue from <out>/last if present");
  cmd->add_flag("--quiet", o.quiet, "No progress output");

  auto* m = cmd->add_option_group("model", "Model and encoder geometry");
  m->add_option("--encoder-layers", r.model.encoder_layers)->capture_default_str();
  m->add_option("--frames", r.model.frames)->capture_default_str();
  m->add_option("--enc-dim", r.model.enc_dim)->capture_default_str();
  m->add_option("--model-dim", r.model.model_dim)->capture_default_str();
  m->add_option("--tf-layers", r.model.tf_layers)->capture_default_str();
  m->add_option("--tf-heads", r.model.tf_heads)->capture_default_str();
  m->add_option("--ff-dim", r.model.ff_dim)->capture_default_str();
  m->add_option("--head-hidden", r.model.head_hidden)->capture_default_str();
  m->add_option("--dropout", r.model.dropout_p)->capture_default_str();
  m->add_flag("--no-positional", f.no_positional, "Disable sinusoidal positional encoding");
  m->add_option("--hop", r.encoder.hop, "Mock encoder hop (samples)")->capture_default_str();
  m->add_option("--fft-size", r.encoder.fft_size, "Mock encoder FFT size")->capture_default_str();
  m->add_option("--bands", r.encoder.bands, "Mock encoder band count")->capture_default_str();
  m->add_option("--encoder-seed", r.encoder.seed, "Mock encoder seed")->capture_default_str();
}

void finish_run_options(TrainOptions& o, const ModelFlags& f) {
  RunConfig& r = o.run;
  r.model.positional_encoding = !f.no_positional;
  r.encoder.layers = r.model.encoder_layers;
  r.encoder.frames = r.model.frames;
  r.encoder.dim = r.model.enc_dim;
  r.backend = parse_backend(f.backend);
  Thresholds t = parse_thresholds(f.thresholds);
  std::copy(t.begin(), t.end(), r.thresholds.begin());
  r.mix.mix_speech = !f.no_mix_speech;
  r.mix.mix_noise = !f.no_mix_noise;
  r.mix.mix_music = !f.no_mix_music;
  if (f.p_augment >= 0.0) {
    r.augment.p_speed = r.augment.p_freq_drop = r.augment.p_frame_drop = r.augment.p_bit_reduce =
        r.augment.p_sign_flip = f.p_augment;
  }
}

std::optional<FeatureBackend> optional_backend(const std::string& s) {
  if (s.empty()) return std::nullopt;
  return parse_backend(s);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Five-class speech data filter: train, fine-tune, evaluate, filter, ingest"};
  app.config_formatter(std::make_shared<CLI::ConfigINI>());
  app.set_config("--config", "", "INI file with per-subcommand sections");
  app.require_subcommand(1);

  TrainOptions train_opts = [] {
    TrainOptions o;
    o.run = RunConfig::for_stage(Stage::simulated);
    return o;
  }();
  ModelFlags train_flags;
  auto* train = app.add_subcommand("train", "Stage one: simulated data with dynamic mixing");
  add_run_options(train, train_opts, train_flags);
  train->add_option("--pool-english", train_opts.pool_english, "English speech pool manifest");
  train->add_option("--pool-foreign", train_opts.pool_foreign, "Foreign speech pool manifest");
  train->add_option("--pool-synthetic", train_opts.pool_synthetic, "Synthetic speech pool manifest");
  train->add_option("--pool-music", train_opts.pool_music, "Music pool manifest");
  train->add_option("--pool-noise", train_opts.pool_noise, "Noise pool manifest");
  train->add_option("--snr-min", train_opts.run.mix.snr_min_db, "Lowest mixing SNR (dB)")->capture_default_str();
  train->add_option("--snr-max", train_opts.run.mix.snr_max_db, "Highest mixing SNR (dB)")->capture_default_str();
  train->add_flag("--no-mix-speech", train_flags.no_mix_speech, "Skip speech mixing");
  train->add_flag("--no-mix-noise", train_flags.no_mix_noise, "Skip noise mixing");
  train->add_flag("--no-mix-music", train_flags.no_mix_music, "Skip music mixing");

  TrainOptions ft_opts = [] {
    TrainOptions o;
    o.run = RunConfig::for_stage(Stage::finetune);
    return o;
  }();
  ModelFlags ft_flags;
  auto* finetune = app.add_subcommand("finetune", "Stage two: real data with augmentation");
  add_run_options(finetune, ft_opts, ft_flags);
  finetune->add_option("--base", ft_opts.base_checkpoint, "Checkpoint directory to start from")->required();
  finetune->add_option("--p-augment", ft_flags.p_augment, "Probability for every augmentation (default 0.2 each)");

  EvalCommandOptions eval_opts;
  std::string eval_thresholds, eval_backend, eval_split = "test";
  bool no_timing = false;
  auto* eval = app.add_subcommand("eval", "Per-class report on a manifest split");
  eval->add_option("--checkpoint", eval_opts.checkpoint, "Checkpoint directory")->required();
  eval->add_option("--manifest", eval_opts.manifest, "JSONL manifest")->required();
  eval->add_option("--split", eval_split, "train, val or test")->capture_default_str();
  eval->add_option("--thresholds", eval_thresholds, "0.5 or class=value,...");
  eval->add_option("--backend", eval_backend, "mock or file (default: as trained)");
  eval->add_option("--out", eval_opts.out_dir, "Report directory")->required();
  eval->add_flag("--no-timing", no_timing, "Leave T_proc empty so reports are reproducible");
  eval->add_flag("--quiet", eval_opts.quiet, "No console output");

  FilterOptions filter_opts;
  std::string filter_thresholds, filter_backend, filter_disable, filter_policy = "any";
  auto* filter = app.add_subcommand("filter", "Split a manifest into kept and rejected entries");
  filter->add_option("--checkpoint", filter_opts.checkpoint, "Checkpoint directory")->required();
  filter->add_option("--manifest", filter_opts.manifest, "JSONL manifest to filter")->required();
  filter->add_option("--thresholds", filter_thresholds, "0.5 or class=value,...");
  filter->add_option("--disable", filter_disable, "Comma-separated classes to ignore");
  filter->add_option("--policy", filter_policy, "any or tiered")->capture_default_str();
  filter->add_option("--backend", filter_backend, "mock or file (default: as trained)");
  filter->add_option("--out", filter_opts.out_dir, "Output directory")->required();
  filter->add_flag("--quiet", filter_opts.quiet, "No console output");

  IngestOptions ingest_opts;
  auto* ingest = app.add_subcommand("ingest", "Convert a Label Studio export into split manifests");
  ingest->add_option("--export", ingest_opts.export_path, "Label Studio JSON export")->required();
  ingest->add_option("--out", ingest_opts.out_dir, "Output directory")->required();
  ingest->add_option("--ratios", ingest_opts.ratios, "train val test fractions")->expected(3)->capture_default_str();
  ingest->add_option("--seed", ingest_opts.seed, "Split seed")->capture_default_str();
  ingest->add_flag("--quiet", ingest_opts.quiet, "No console output");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*train) {
      finish_run_options(train_opts, train_flags);
      cmd_train(train_opts);
    } else if (*finetune) {
      finish_run_options(ft_opts, ft_flags);
      cmd_finetune(ft_opts);
    } else if (*eval) {
      eval_opts.split = parse_split(eval_split);
      eval_opts.thresholds = parse_thresholds(eval_thresholds);
      eval_opts.backend = optional_backend(eval_backend);
      eval_opts.timing = !no_timing;
      cmd_eval(eval_opts);
    } else if (*filter) {
      filter_opts.thresholds = parse_thresholds(filter_thresholds);
      filter_opts.backend = optional_backend(filter_backend);
      filter_opts.policy = parse_policy(filter_policy);
      const auto disabled = parse_class_set(filter_disable);
      for (std::size_t c = 0; c < kNumClasses; ++c) filter_opts.enabled[c] = !disabled[c];
      cmd_filter(filter_opts);
    } else if (*ingest) {
      cmd_ingest(ingest_opts);
    }
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 1;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
