// whilter-toy: writes a small synthetic five-class corpus (WAV clips plus
// manifest.jsonl and pool_<name>.jsonl) for trying out the whilter tool.

#include <cstdio>

#include <CLI11.hpp>

#include "whilter/synth.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Generate a synthetic five-class corpus"};
  std::string out;
  std::uint64_t seed = 1;
  whilter::ToyCorpusSizes sizes;
  whilter::ToyConfig config;
  app.add_option("--out", out, "Output directory")->required();
  app.add_option("--seed", seed, "Generator seed")->capture_default_str();
  app.add_option("--train", sizes.train, "Training clips")->capture_default_str();
  app.add_option("--val", sizes.val, "Validation clips")->capture_default_str();
  app.add_option("--test", sizes.test, "Test clips")->capture_default_str();
  app.add_option("--pool", sizes.pool, "Clips per mixing pool")->capture_default_str();
  app.add_option("--samples", config.samples, "Samples per clip at 16 kHz")->capture_default_str();
  CLI11_PARSE(app, argc, argv);
  try {
    const auto corpus = whilter::make_toy_corpus(seed, sizes, config);
    whilter::write_toy_corpus(corpus, out);
    std::printf("wrote %zu clips to %s\n", corpus.audio.size(), out.c_str());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
