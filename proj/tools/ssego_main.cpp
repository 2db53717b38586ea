#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ssego/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"ssego: synthetic data, self-supervised pose estimation, drone model and fusion"};
  app.require_subcommand(1);
  std::vector<std::string> files, sets;
  std::string out;
  bool print_defaults = false;

  for (const std::string& verb : ssego::command_names()) {
    CLI::App* sub = app.add_subcommand(verb, "run the " + verb + " stage");
    sub->add_option("-c,--config", files, "key = value config file (repeatable, later wins)");
    sub->add_option("-s,--set", sets, "key=value override (repeatable, applied after files)");
    sub->add_option("-o,--out", out, "output directory (same as out=...)");
    sub->add_flag("--print-defaults", print_defaults, "print every key with its default and exit");
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : ssego::kExitConfig;
  }
  const std::string verb = app.get_subcommands().front()->get_name();
  if (print_defaults) {
    std::cout << ssego::command_config(verb).echo();
    return 0;
  }
  if (!out.empty()) sets.push_back("out=" + out);
  return ssego::run_guarded(verb, files, sets, std::cout, std::cerr);
}
