// pqdl: config-driven experiments. Exit codes: 0 success, 1 configuration
// error, 2 runtime failure.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <string>

#include "pqdl/experiment.hpp"

namespace {

struct Options {
  std::string config;
  std::string out;
  std::size_t jobs = 1;
  std::uint64_t seed_offset = 0;
  std::string message;
};

// --out, then the config's output_dir, then $PQDL_OUT_DIR, then ./pqdl_out.
std::filesystem::path output_dir(const Options& o, const pqdl::ExperimentConfig& c) {
  if (!o.out.empty()) return o.out;
  if (!c.output_dir.empty()) return c.output_dir;
  if (const char* env = std::getenv("PQDL_OUT_DIR"); env && *env) return env;
  return "pqdl_out";
}

using Runner = std::function<void(const pqdl::ExperimentConfig&, const pqdl::OutputDir&, const Options&)>;

std::filesystem::path message_path(const Options& o, const pqdl::OutputDir& out) {
  return o.message.empty() ? pqdl::default_message_path(out) : std::filesystem::path(o.message);
}

int run(const Options& o, const Runner& runner) {
  pqdl::ExperimentConfig config;
  try {
    config = pqdl::with_seed_offset(pqdl::load_config(o.config), o.seed_offset);
  } catch (const pqdl::ConfigError& e) {
    std::cerr << "pqdl: config error: " << e.what() << '\n';
    return 1;
  }
  try {
    const pqdl::OutputDir out(output_dir(o, config), config);
    runner(config, out, o);
  } catch (const pqdl::ConfigError& e) {
    std::cerr << "pqdl: config error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "pqdl: error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Prequential description lengths, calibrated learning curves and label codes"};
  app.require_subcommand(1);
  Options opts;
  int status = 0;

  auto add = [&](const std::string& name, const std::string& help, Runner runner,
                 bool wants_message = false) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", opts.config, "experiment JSON")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", opts.out, "output directory (default: $PQDL_OUT_DIR or ./pqdl_out)");
    sub->add_option("--jobs", opts.jobs, "worker threads")->check(CLI::PositiveNumber);
    sub->add_option("--seed-offset", opts.seed_offset, "added to every seed");
    if (wants_message)
      sub->add_option("--message", opts.message, "encoded message path (default: <out>/labels.pqdl)");
    sub->callback([&, runner] { status = run(opts, runner); });
  };

  add("train", "sweep learning rates and train every model and seed on the pool",
      [](const auto& c, const auto& out, const Options& o) { pqdl::run_train(c, out, o.jobs); });
  add("profile", "calibrated learning curves over prefix sizes",
      [](const auto& c, const auto& out, const Options& o) { pqdl::run_profile(c, out, o.jobs); });
  add("snr", "learning curves plus pairwise bootstrap SNR",
      [](const auto& c, const auto& out, const Options& o) { pqdl::run_snr(c, out, o.jobs); });
  add("width-sweep", "learning curves of one model at several hidden widths",
      [](const auto& c, const auto& out, const Options& o) { pqdl::run_width_sweep(c, out, o.jobs); });
  add("mdl", "prequential description lengths and the evidence table",
      [](const auto& c, const auto& out, const Options& o) { pqdl::run_mdl(c, out, o.jobs); });
  add("encode", "arithmetic-code the pool labels into a message file",
      [](const auto& c, const auto& out, const Options& o) {
        const auto r = pqdl::run_encode(c, out, message_path(o, out));
        std::cout << r.message.bit_length() << " bits for " << r.ledger.blocks.size() << " blocks\n";
      },
      true);
  add("decode", "recover the pool labels from a message file",
      [](const auto& c, const auto& out, const Options& o) {
        const auto labels = pqdl::run_decode(c, out, message_path(o, out));
        std::cout << "decoded " << labels.size() << " labels\n";
      },
      true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }
  return status;
}
