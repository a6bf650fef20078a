// bflu: runs one study and writes its CSV/JSON report.
#include <algorithm>
#include <iostream>
#include <regex>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "bflu/studies.hpp"

namespace {

using bflu::ConfigError;
using bflu::RunConfig;

constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 1;

int fail(int code, const std::string& kind, const std::string& field, const std::string& message) {
  nlohmann::ordered_json e;
  e["error"] = kind;
  if (!field.empty()) e["field"] = field;
  e["message"] = message;
  std::cerr << e.dump() << "\n";
  return code;
}

std::vector<bflu::Index> parse_sizes(const std::vector<std::string>& items) {
  std::vector<bflu::Index> out;
  for (std::string item : items) {
    item.erase(std::remove_if(item.begin(), item.end(), ::isspace), item.end());
    if (item.empty()) continue;
    std::size_t used = 0;
    long long v = 0;
    try {
      v = std::stoll(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != item.size()) throw ConfigError("sizes", "'" + item + "' is not an integer");
    out.push_back(v);
  }
  return out;
}

// CLI11 messages mention the option; recover the key for the error record.
std::string field_of(const CLI::App& app, const std::string& msg) {
  std::string best;
  for (const CLI::Option* o : app.get_options()) {
    const std::string name = o->get_single_name();
    if (name.empty() || name == "help") continue;
    const std::regex word("(^|[^A-Za-z0-9_])" + name + "($|[^A-Za-z0-9_])");
    if (name.size() > best.size() && std::regex_search(msg, word)) best = name;
  }
  if (best.empty()) {
    // unknown keys: the message ends with the key
    const auto pos = msg.find_last_of(" :");
    if (pos != std::string::npos && pos + 1 < msg.size()) best = msg.substr(pos + 1);
  }
  return best;
}

}  // namespace

int main(int argc, char** argv) {
  RunConfig cfg;
  std::vector<std::string> sizes{"4096", "8192", "16384", "32768", "65536"};
  std::string write_config;

  CLI::App app{"Butterfly compression, reconstruction and hierarchical LU studies"};
  app.set_config("--config", "", "key=value configuration file; command-line flags override it");
  app.allow_config_extras(CLI::config_extras_mode::error);
  app.require_subcommand(1);

  app.add_option("--geometry", cfg.geometry, "circle, arc or file:PATH")->capture_default_str();
  app.add_option("--kernel", cfg.kernel, "efie2d or synthetic")->capture_default_str();
  app.add_option("--ppw", cfg.ppw, "points per wavelength")->capture_default_str();
  app.add_option("--sizes", sizes, "comma-separated, strictly increasing")->delimiter(',')->capture_default_str();
  app.add_option("--tol", cfg.tol, "direct compression tolerance")->capture_default_str();
  app.add_option("--eps", cfg.eps, "per-block reconstruction target")->capture_default_str();
  app.add_option("--delta", cfg.delta, "factorization probe residual bound")->capture_default_str();
  app.add_option("--chi", cfg.chi, "admissibility parameter")->capture_default_str();
  app.add_option("--chi_s", cfg.chi_s, "skeleton oversampling")->capture_default_str();
  app.add_option("--leaf_size", cfg.leaf_size)->capture_default_str();
  app.add_option("--r_max", cfg.r_max)->capture_default_str();
  app.add_option("--c", cfg.c, "sketch oversampling")->capture_default_str();
  app.add_option("--level_threshold", cfg.level_threshold, "deepest butterfly tried iteratively")
      ->capture_default_str();
  app.add_option("--max_iter", cfg.max_iter)->capture_default_str();
  app.add_option("--rank_tol", cfg.rank_tol, "adaptive rank threshold, 0 for fixed ranks")->capture_default_str();
  app.add_option("--seed", cfg.seed)->capture_default_str();
  app.add_option("--l_min", cfg.l_min)->capture_default_str();
  app.add_option("--l_max", cfg.l_max)->capture_default_str();
  app.add_option("--schemes", cfg.schemes, "iterative, noniterative or both")->capture_default_str();
  app.add_option("--block_level", cfg.block_level, "tree level of the reconstructed block")->capture_default_str();
  app.add_option("--radius", cfg.radius, "cylinder radius in wavelengths")->capture_default_str();
  app.add_option("--angles", cfg.angles)->capture_default_str();
  app.add_option("--monostatic", cfg.monostatic)->capture_default_str();
  app.add_option("--amplitude", cfg.amplitude)->capture_default_str();
  app.add_option("--n_rhs", cfg.n_rhs, "right-hand sides used for solve timing")->capture_default_str();
  app.add_option("--time_budget", cfg.time_budget, "seconds")->capture_default_str();
  app.add_option("--correction", cfg.correction, "one residual-correction step per solve")->capture_default_str();
  app.add_option("--output_dir", cfg.output_dir)->capture_default_str();
  app.add_option("--prefix", cfg.prefix, "file name prefix for reports")->capture_default_str();
  app.add_option("--write_config", write_config, "also write the effective configuration here");

  const std::pair<const char*, const char*> subs[] = {
      {"reconstruct", "randomized reconstruction of admissible blocks over a range of levels"},
      {"ranks", "maximum butterfly ranks of H and its LU factors per size"},
      {"scaling", "fill, factor and solve cost per size with log-log slopes"},
      {"cylinder", "PEC cylinder echo width against the analytic series"},
      {"compress", "compression accuracy and storage per size"},
      {"solve", "manufactured-solution factorize and solve per size"},
  };
  for (const auto& [name, help] : subs) app.add_subcommand(name, help)->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail(kExitConfig, "config", field_of(app, e.what()), e.what());
  }

  try {
    cfg.experiment = bflu::experiment_from_string(app.get_subcommands().front()->get_name());
    cfg.sizes = parse_sizes(sizes);
    bflu::validate(cfg);
  } catch (const ConfigError& e) {
    return fail(kExitConfig, "config", e.field(), e.what());
  }

  try {
    if (!write_config.empty()) bflu::write_atomic(write_config, bflu::to_config_text(cfg));
    std::vector<bflu::SweepRow> sweep;
    const bflu::Report rep = bflu::run_experiment(cfg, &sweep);
    bflu::write_report(rep, cfg);
    if (!sweep.empty())
      bflu::write_atomic(std::filesystem::path(cfg.output_dir) / (cfg.prefix + "cylinder_sweep.csv"),
                         bflu::sweep_to_csv(sweep));
    std::cout << bflu::to_json(rep)["summary"].dump(2) << "\n";
  } catch (const ConfigError& e) {
    return fail(kExitConfig, "config", e.field(), e.what());
  } catch (const bflu::Error& e) {
    return fail(kExitRuntime, "runtime", "", e.what());
  } catch (const std::exception& e) {
    return fail(kExitRuntime, "runtime", "", e.what());
  }
  return 0;
}
