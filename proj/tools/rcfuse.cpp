// Command-line front end: convert, plan, prune, tile, simulate, report, sweep, pipeline.
#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "rcfuse/pipeline.hpp"

namespace {

using namespace rcfuse;

struct Options {
  RunConfig config;
  std::string weight_buffer = "96K";
  std::string feature_half = "192K";
  std::string boundary = "zero";
  std::string input;
  std::string json_path;
  std::string output_path;
  std::string sizes = "50K..300K:25K";
  std::string trace_path;
  bool functional = false;
  bool no_convert = false;
};

void write_file(const std::string& path, const std::string& text) {
  if (path.empty()) return;
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  std::ofstream out(path);
  if (!out) throw std::ios_base::failure("cannot write '" + path + "'");
  out << text;
  if (!out) throw std::ios_base::failure("write to '" + path + "' failed");
}

// Relative artifact paths land in --out-dir when one is given.
std::string in_dir(const RunConfig& c, const std::string& path) {
  if (path.empty() || c.output_dir.empty() || std::filesystem::path(path).is_absolute()) return path;
  return (std::filesystem::path(c.output_dir) / path).string();
}

TensorShape parse_input(const std::string& text, const std::string& model_path) {
  const auto x = text.find('x');
  if (x == std::string::npos) throw std::invalid_argument("--input expects WxH, got '" + text + "'");
  TensorShape s;
  s.width = std::stoll(text.substr(0, x));
  s.height = std::stoll(text.substr(x + 1));
  s.channels = read_model_file(model_path).input.channels;
  return s;
}

void finalize(Options& o) {
  o.config.weight_buffer = parse_bytes(o.weight_buffer);
  o.config.feature_half = parse_bytes(o.feature_half);
  o.config.boundary = parse_boundary_policy(o.boundary);
  if (!o.input.empty()) o.config.input = parse_input(o.input, o.config.model_path);
  if (o.no_convert) o.config.convert = false;
  o.config.check();
}

void emit(const Options& o, const StageOutput& out) {
  std::cout << out.text;
  write_file(in_dir(o.config, o.json_path), dump(out.json));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Buffer-constrained layer fusion planner and DLA simulator"};
  app.require_subcommand(1);
  Options o;
  auto& c = o.config;

  auto common = [&](CLI::App* sub) {
    sub->add_option("model", c.model_path, "model description (JSON)")->required()->check(CLI::ExistingFile);
    sub->add_option("--weight-buffer", o.weight_buffer, "weight buffer size B (bytes, K/M suffix)");
    sub->add_option("--feature-half", o.feature_half, "one ping-pong half of the feature buffer");
    sub->add_option("--overshoot", c.overshoot, "partition overshoot m while morphing");
    sub->add_option("--fps", c.fps, "frames per second");
    sub->add_option("--energy-pj-per-bit", c.pj_per_bit, "DRAM energy per bit (pJ)");
    sub->add_option("--precision-bits", c.precision_bits, "weight and activation precision");
    sub->add_option("--seed", c.seed, "seed for synthetic gammas, weights and inputs");
    sub->add_option("--boundary", o.boundary, "tile seam policy")->check(CLI::IsMember({"zero", "replicate"}));
    sub->add_option("--input", o.input, "override input resolution, WxH");
    sub->add_option("--arch", c.arch_path, "architecture description (JSON)")->check(CLI::ExistingFile);
    sub->add_option("--json", o.json_path, "write the structured report here");
    sub->add_option("--out-dir", c.output_dir, "directory for relative output paths");
  };

  auto* convert = app.add_subcommand("convert", "replace dense convolutions with lightweight blocks");
  common(convert);
  convert->add_option("-o,--output", o.output_path, "converted model file");

  auto* plan = app.add_subcommand("plan", "partition into fusion groups");
  common(plan);

  auto* prune = app.add_subcommand("prune", "morph the model until every group fits the weight buffer");
  common(prune);
  prune->add_option("--budget", o.weight_buffer, "alias of --weight-buffer");
  prune->add_option("--gammas", c.gamma_path, "gamma score file")->check(CLI::ExistingFile);
  prune->add_option("--iterations", c.iterations, "morphing iterations");
  prune->add_option("--rescale-first", c.rescale_first_k, "iterations that end with a uniform rescale");
  prune->add_option("-o,--output", o.output_path, "morphed model file");

  auto* tile = app.add_subcommand("tile", "solve tile sizes and ping-pong schedules");
  common(tile);
  tile->add_option("--trace", o.trace_path, "write-mask address trace of the first layer output");

  auto* simulate = app.add_subcommand("simulate", "cycle estimate, optionally with a functional check");
  common(simulate);
  simulate->add_flag("--functional", o.functional, "run random weights through tiles and compare");

  auto* report = app.add_subcommand("report", "external-memory traffic and energy");
  common(report);
  report->add_option("--baseline", c.baseline_path, "model whose layer-by-layer traffic is the reference")
      ->check(CLI::ExistingFile);

  auto* sweep = app.add_subcommand("sweep", "bandwidth against weight buffer size");
  common(sweep);
  sweep->add_option("--sizes", o.sizes, "e.g. 50K..300K:25K or 64K,96K,128K");
  sweep->add_option("-o,--output", o.output_path, "two-column plot data file");

  auto* pipeline = app.add_subcommand("pipeline", "run every stage and emit one report");
  common(pipeline);
  pipeline->add_option("--gammas", c.gamma_path, "gamma score file")->check(CLI::ExistingFile);
  pipeline->add_option("--iterations", c.iterations, "morphing iterations");
  pipeline->add_option("--rescale-first", c.rescale_first_k, "iterations that end with a uniform rescale");
  pipeline->add_flag("--no-convert", o.no_convert, "skip the lightweight conversion");
  pipeline->add_option("-o,--output", o.output_path, "final model file");

  auto* gammas = app.add_subcommand("gammas", "write seeded synthetic gamma scores");
  common(gammas);
  gammas->add_option("-o,--output", o.output_path, "gamma file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    finalize(o);
    if (convert->parsed()) {
      NetGraph converted;
      emit(o, run_convert(c, &converted));
      if (!o.output_path.empty()) write_file(in_dir(c, o.output_path), dump(model_to_json(converted)));
    } else if (plan->parsed()) {
      emit(o, run_plan(c));
    } else if (prune->parsed()) {
      NetGraph pruned;
      emit(o, run_prune(c, &pruned));
      if (!o.output_path.empty()) write_file(in_dir(c, o.output_path), dump(model_to_json(pruned)));
    } else if (tile->parsed()) {
      emit(o, run_tile(c));
      if (!o.trace_path.empty()) {
        const NetGraph g = load_model(c);
        if (!g.layers.empty()) {
          const auto& s = *g.layers.front().output_shape;
          std::ostringstream os;
          write_address_trace(os, s.pixels(), s.channels);
          write_file(in_dir(c, o.trace_path), os.str());
        }
      }
    } else if (simulate->parsed()) {
      emit(o, run_simulate(c, o.functional));
    } else if (report->parsed()) {
      emit(o, run_report(c));
    } else if (sweep->parsed()) {
      const auto out = run_sweep(c, parse_sizes(o.sizes));
      emit(o, out);
      write_file(in_dir(c, o.output_path), out.text);
    } else if (pipeline->parsed()) {
      const auto out = full_pipeline(c);
      emit(o, out);
      if (!o.output_path.empty()) write_file(in_dir(c, o.output_path), dump(out.json.at("final_model")));
    } else if (gammas->parsed()) {
      const NetGraph g = load_model(c);
      std::ostringstream os;
      write_gamma_text(os, synthetic_gammas(g, c.seed));
      write_file(in_dir(c, o.output_path), os.str());
    }
  } catch (const std::exception& e) {
    const auto [code, kind] = classify_error(e);
    std::cerr << Json{{"error", kind}, {"exit_code", code}, {"message", e.what()}}.dump() << "\n";
    return code;
  }
  return kExitOk;
}
