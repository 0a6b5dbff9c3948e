#include <cstdio>
#include <exception>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "commands.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Blind denoising diffusion lab"};
  app.require_subcommand(1);
  std::string config;
  std::optional<std::string> out;
  std::optional<std::uint64_t> seed;
  bool quiet = false;
  for (const auto& name : bddm::cli::command_names()) {
    auto* sub = app.add_subcommand(name);
    sub->add_option("--config", config, "JSON config file")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", out, "output directory (default out/<experiment>)");
    sub->add_option("--seed", seed, "master seed, overrides the config");
    sub->add_flag("--quiet", quiet, "suppress progress lines");
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    // help and version exit 0; anything else is a usage problem, i.e. a config error
    return app.exit(e) == 0 ? 0 : 2;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    bddm::cli::Context ctx = bddm::cli::make_context(config, out, seed);
    ctx.quiet = quiet;
    bddm::cli::run_command(command, ctx);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "bddm %s: %s\n", command.c_str(), e.what());
    return bddm::cli::exit_code_for(e);
  }
  return 0;
}
