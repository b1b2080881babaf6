#include "rcfuse/pipeline.hpp"

#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace rcfuse {

namespace {

std::string fmt(const char* format, ...) {
  char buf[512];
  va_list args;
  va_start(args, format);
  std::vsnprintf(buf, sizeof buf, format, args);
  va_end(args);
  return buf;
}

double mb(double bytes) { return bytes / kBytesPerMB; }

bool has_dense_convs(const NetGraph& g) {
  for (std::size_t i = 1; i < g.layers.size(); ++i) {
    if (g.layers[i].kind == LayerKind::Conv) return true;
  }
  return false;
}

// Execution plans use no overshoot: every group must fit the buffer as is.
FusionPlan execution_plan(const NetGraph& g, const RunConfig& c) {
  return partition(g, c.weight_buffer, 0.0, c.traffic_options().bytes_per_weight);
}

Json traffic_summary(const TrafficReport& r, double pj) {
  return {{"feature_mb_per_frame", mb(static_cast<double>(r.feature_bytes))},
          {"weight_mb_per_frame", mb(static_cast<double>(r.weight_bytes))},
          {"total_mb_per_frame", mb(static_cast<double>(r.total_bytes))},
          {"feature_mb_per_s", mb(r.feature_bandwidth())},
          {"weight_mb_per_s", mb(r.weight_bandwidth())},
          {"bandwidth_mb_per_s", mb(r.bandwidth())},
          {"energy_mj_per_s", dram_energy(r.bandwidth(), pj)}};
}

std::string traffic_row(const char* label, const TrafficReport& r, double pj) {
  return fmt("%-26s %12.2f %12.2f %14.1f %12.1f\n", label, mb(static_cast<double>(r.feature_bytes)),
             mb(static_cast<double>(r.weight_bytes)), mb(r.bandwidth()), dram_energy(r.bandwidth(), pj));
}

const char* traffic_header() {
  return "execution                    feature MB    weight MB    bandwidth MB/s  energy mJ/s\n";
}

std::string group_line(std::size_t g, const FusionGroup& group) {
  std::ostringstream os;
  os << "  group " << g << ": layers " << group.layer_ids.front() << ".." << group.layer_ids.back()
     << " (" << group.layer_ids.size() << ")  " << group.weight_bytes << " B";
  if (group.degenerate) os << "  degenerate";
  os << "\n";
  return os.str();
}

}  // namespace

std::pair<int, std::string> classify_error(const std::exception& e) {
  if (dynamic_cast<const ParseError*>(&e) || dynamic_cast<const nlohmann::json::exception*>(&e)) {
    return {kExitParse, "parse"};
  }
  if (dynamic_cast<const Infeasible*>(&e) || dynamic_cast<const TileInfeasible*>(&e)) {
    return {kExitInfeasible, "infeasible"};
  }
  if (dynamic_cast<const std::ios_base::failure*>(&e)) return {kExitIo, "io"};
  return {kExitValidation, "validation"};
}

Bytes parse_bytes(const std::string& text) {
  if (text.empty()) throw std::invalid_argument("empty size");
  double scale = 1;
  std::string number = text;
  const char suffix = text.back();
  if (suffix == 'K' || suffix == 'k') {
    scale = 1024;
    number.pop_back();
  } else if (suffix == 'M' || suffix == 'm') {
    scale = 1024.0 * 1024.0;
    number.pop_back();
  }
  std::size_t used = 0;
  double value = 0;
  try {
    value = std::stod(number, &used);
  } catch (const std::exception&) {
    throw std::invalid_argument("not a size: '" + text + "'");
  }
  if (used != number.size() || value <= 0) throw std::invalid_argument("not a size: '" + text + "'");
  return static_cast<Bytes>(std::llround(value * scale));
}

std::vector<Bytes> parse_sizes(const std::string& text) {
  std::vector<Bytes> out;
  const auto dots = text.find("..");
  if (dots == std::string::npos) {
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(parse_bytes(item));
  } else {
    const auto colon = text.find(':', dots);
    const Bytes lo = parse_bytes(text.substr(0, dots));
    const Bytes hi = parse_bytes(text.substr(dots + 2, colon == std::string::npos ? std::string::npos : colon - dots - 2));
    const Bytes step = colon == std::string::npos ? 25 * 1024 : parse_bytes(text.substr(colon + 1));
    if (hi < lo) throw std::invalid_argument("size range must ascend: '" + text + "'");
    for (Bytes s = lo; s <= hi; s += step) out.push_back(s);
  }
  if (out.empty()) throw std::invalid_argument("no sizes in '" + text + "'");
  return out;
}

void RunConfig::check() const {
  if (weight_buffer <= 0 || feature_half <= 0) throw std::invalid_argument("buffer sizes must be positive");
  if (overshoot < 0) throw std::invalid_argument("overshoot must be >= 0");
  if (fps <= 0) throw std::invalid_argument("fps must be positive");
  if (pj_per_bit < 0) throw std::invalid_argument("energy per bit must be >= 0");
  if (precision_bits < 1 || precision_bits > 32) throw std::invalid_argument("precision must be 1..32 bits");
  if (iterations < 1) throw std::invalid_argument("iterations must be >= 1");
  if (rescale_first_k < 0) throw std::invalid_argument("rescale count must be >= 0");
}

ArchConfig RunConfig::arch() const {
  ArchConfig a;
  if (arch_path) {
    std::ifstream in(*arch_path);
    if (!in) throw std::ios_base::failure("cannot open arch file '" + *arch_path + "'");
    Json j;
    try {
      j = Json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(std::string("arch: ") + e.what());
    }
    a = j.get<ArchConfig>();
  }
  a.weight_buffer_bytes = weight_buffer;
  a.feature_half_bytes = feature_half;
  a.act_bits = precision_bits;
  a.weight_bits = precision_bits;
  a.check();
  return a;
}

NetGraph load_model(const std::string& path, const std::optional<TensorShape>& input) {
  NetGraph g = read_model_file(path);
  if (input) g = with_input(std::move(g), *input);
  return g;
}

NetGraph load_model(const RunConfig& config) {
  config.check();
  return load_model(config.model_path, config.input);
}

GammaTable load_gammas(const RunConfig& config, const NetGraph& graph) {
  if (!config.gamma_path) return synthetic_gammas(graph, config.seed);
  GammaTable table = read_gamma_file(*config.gamma_path);
  const auto missing = missing_gammas(graph, table);
  if (!missing.empty()) {
    throw MissingGamma(fmt("gamma file '%s' has no score for layer %d channel %d (%zu missing)",
                           config.gamma_path->c_str(), missing.front().layer_id,
                           missing.front().channel, missing.size()));
  }
  return table;
}

StageOutput run_convert(const RunConfig& config, NetGraph* converted) {
  const NetGraph before = load_model(config);
  const NetGraph after = to_lightweight(before);
  const auto rep = conversion_report(before, after);
  StageOutput out;
  out.json = {{"before", rep.before},
              {"after", rep.after},
              {"param_delta", rep.param_delta()},
              {"mac_delta", rep.mac_delta()},
              {"feature_io_delta", rep.feature_io_delta()},
              {"layers_before", before.layers.size()},
              {"layers_after", after.layers.size()}};
  out.text = fmt("%-10s %14s %16s %16s\n", "model", "params", "GOPs", "feature I/O MB");
  out.text += fmt("%-10s %14lld %16.3f %16.2f\n", "before", static_cast<long long>(rep.before.params),
                  static_cast<double>(rep.before.ops()) * 1e-9, mb(static_cast<double>(rep.before.feature_io_bytes)));
  out.text += fmt("%-10s %14lld %16.3f %16.2f\n", "after", static_cast<long long>(rep.after.params),
                  static_cast<double>(rep.after.ops()) * 1e-9, mb(static_cast<double>(rep.after.feature_io_bytes)));
  if (converted) *converted = after;
  return out;
}

StageOutput run_plan(const RunConfig& config) {
  const NetGraph g = load_model(config);
  const FusionPlan plan = partition(g, config.weight_buffer, config.overshoot,
                                    config.traffic_options().bytes_per_weight);
  const auto violations = check_guidelines(plan, g);
  StageOutput out;
  out.json = {{"model", g.name}, {"plan", plan}, {"guideline_violations", violations}};
  out.text = fmt("%zu groups, budget %lld B, threshold %lld B\n", plan.groups.size(),
                 static_cast<long long>(plan.budget_bytes), static_cast<long long>(plan.threshold()));
  for (std::size_t i = 0; i < plan.groups.size(); ++i) out.text += group_line(i, plan.groups[i]);
  for (const auto& w : plan.warnings) out.text += "warning: " + w + "\n";
  for (const auto& v : violations) out.text += fmt("guideline %d: %s\n", v.guideline, v.message.c_str());
  return out;
}

StageOutput run_prune(const RunConfig& config, NetGraph* pruned) {
  const NetGraph g = load_model(config);
  const GammaTable gammas = load_gammas(config, g);
  RcnetOptions opts;
  opts.budget = config.weight_buffer;
  opts.overshoot = config.overshoot;
  opts.iterations = config.iterations;
  opts.rescale_first_k = config.rescale_first_k;
  opts.bytes_per_weight = config.traffic_options().bytes_per_weight;
  const RcnetResult result = rcnet_iterate(g, gammas, opts);

  StageOutput out;
  out.json = {{"model", g.name},
              {"params_before", model_params(g)},
              {"params_after", model_params(result.graph)},
              {"iterations", result.iterations}};
  out.text = fmt("params %lld -> %lld\n", static_cast<long long>(model_params(g)),
                 static_cast<long long>(model_params(result.graph)));
  for (const auto& it : result.iterations) {
    out.text += fmt("iteration %d: %zu groups, %zu channels removed, params %lld -> %lld", it.iteration,
                    it.plan.groups.size(), it.channels_removed, static_cast<long long>(it.params_before),
                    static_cast<long long>(it.params_after_prune));
    if (it.rescaled) {
      out.text += fmt(", rescaled x%.4f -> %lld", it.rescale_factor, static_cast<long long>(it.params_after));
    }
    out.text += "\n    before:";
    for (Bytes b : it.group_bytes_before) out.text += fmt(" %lld", static_cast<long long>(b));
    out.text += "\n    after: ";
    for (Bytes b : it.group_bytes_after) out.text += fmt(" %lld", static_cast<long long>(b));
    out.text += "\n";
  }
  if (pruned) *pruned = result.graph;
  return out;
}

StageOutput run_tile(const RunConfig& config) {
  const NetGraph g = load_model(config);
  const FusionPlan plan = execution_plan(g, config);
  const int bpa = config.traffic_options().bytes_per_activation;
  const auto tiles = plan_tiles(plan, g, config.feature_half, config.boundary, bpa);
  Json schedules = Json::array();
  StageOutput out;
  out.text = "group  layers  tile WxH        tiles  peak left  peak right  feasible\n";
  for (std::size_t i = 0; i < plan.groups.size(); ++i) {
    const auto sched = make_schedule(plan.groups[i], tiles[i]);
    const auto peak = replay_occupancy(sched, plan.groups[i], tiles[i], g, bpa);
    Json sj = sched;
    sj["peak_left_bytes"] = peak.left;
    sj["peak_right_bytes"] = peak.right;
    schedules.push_back(std::move(sj));
    out.text += fmt("%5zu  %6zu  %5lldx%-8lld %6lld  %9lld  %10lld  %s\n", i, plan.groups[i].layer_ids.size(),
                    static_cast<long long>(tiles[i].tile_width), static_cast<long long>(tiles[i].tile_height),
                    static_cast<long long>(tiles[i].tile_count), static_cast<long long>(peak.left),
                    static_cast<long long>(peak.right), tiles[i].feasible ? "yes" : "no");
  }
  out.json = {{"model", g.name},
              {"feature_half_bytes", config.feature_half},
              {"plan", plan},
              {"tiles", tiles},
              {"schedules", std::move(schedules)}};
  return out;
}

StageOutput run_simulate(const RunConfig& config, bool functional) {
  const NetGraph g = load_model(config);
  const ArchConfig arch = config.arch();
  const FusionPlan plan = execution_plan(g, config);
  const auto tiles = plan_tiles(plan, g, config.feature_half, config.boundary,
                                config.traffic_options().bytes_per_activation);
  StageOutput out;
  SimResult sim;
  Json check;
  if (functional) {
    const auto weights = random_weights(g, config.seed);
    const auto input = random_tensor(g.input.channels, g.input.height, g.input.width, config.seed + 1);
    sim = simulate_network(g, plan, tiles, arch, &weights, &input);
    const auto reference = run_reference(g, weights, input);
    std::int64_t compared = 0, mismatched = 0, seam = 0;
    if (!g.layers.empty()) {
      const auto& ref = reference.at(g.layers.back().id);
      for (std::int64_t y = 0; y < ref.height(); ++y) {
        if (sim.seam_rows[static_cast<std::size_t>(y)]) {
          ++seam;
          continue;
        }
        ++compared;
        bool same = true;
        for (std::int64_t c = 0; c < ref.channels(); ++c)
          for (std::int64_t x = 0; x < ref.width(); ++x) same = same && ref(c, y, x) == (*sim.output)(c, y, x);
        if (!same) ++mismatched;
      }
    }
    check = {{"rows_compared", compared}, {"rows_near_seams", seam}, {"rows_mismatched", mismatched}};
  } else {
    sim = simulate_network(g, plan, tiles, arch);
  }
  const auto& perf = sim.perf;
  out.json = {{"model", g.name}, {"arch", arch}, {"perf", perf}};
  if (functional) out.json["functional_check"] = check;
  out.text = fmt("cycles/frame %lld  MACs/frame %lld\n", static_cast<long long>(perf.total_cycles),
                 static_cast<long long>(perf.total_macs));
  out.text += fmt("utilization %.4f  achieved %.1f GOPS of %.1f peak  %.2f fps at %.0f MHz\n", perf.utilization,
                  perf.achieved_gops, perf.peak_gops, perf.fps, arch.clock_hz * 1e-6);
  if (!perf.low_utilization.empty()) {
    out.text += "low utilization layers:";
    for (int id : perf.low_utilization) out.text += fmt(" %d", id);
    out.text += "\n";
  }
  if (functional) {
    out.text += fmt("functional check: %lld rows compared, %lld near seams, %lld mismatched\n",
                    static_cast<long long>(check["rows_compared"].get<std::int64_t>()),
                    static_cast<long long>(check["rows_near_seams"].get<std::int64_t>()),
                    static_cast<long long>(check["rows_mismatched"].get<std::int64_t>()));
  }
  return out;
}

StageOutput run_report(const RunConfig& config) {
  const NetGraph g = load_model(config);
  // the reference runs at the same frame size as the model under study
  const NetGraph base =
      config.baseline_path
          ? load_model(*config.baseline_path,
                       TensorShape{g.input.width, g.input.height, read_model_file(*config.baseline_path).input.channels})
          : g;
  const ArchConfig arch = config.arch();
  const auto opts = config.traffic_options();
  const FusionPlan plan = execution_plan(g, config);
  const auto tiles = plan_tiles(plan, g, config.feature_half, config.boundary, opts.bytes_per_activation);

  const auto baseline = layer_by_layer_traffic(base, opts);
  const auto own = layer_by_layer_traffic(g, opts);
  const auto fused = fused_traffic(g, plan, tiles, arch, opts);
  const auto per_layer = savings_report(own, fused);
  const double vs_base = savings_fraction(baseline.bandwidth(), fused.bandwidth());
  const double feature_vs_own = savings_fraction(static_cast<double>(own.feature_bytes),
                                                 static_cast<double>(fused.feature_bytes));

  Json layers = Json::array();
  for (const auto& l : per_layer.layers) {
    layers.push_back({{"layer_id", l.layer_id},
                      {"baseline_bytes", l.baseline_bytes},
                      {"fused_bytes", l.fused_bytes},
                      {"savings", l.fraction}});
  }
  StageOutput out;
  out.json = {{"model", g.name},
              {"baseline_model", base.name},
              {"fps", config.fps},
              {"pj_per_bit", config.pj_per_bit},
              {"baseline_layer_by_layer", traffic_summary(baseline, config.pj_per_bit)},
              {"layer_by_layer", traffic_summary(own, config.pj_per_bit)},
              {"fused", traffic_summary(fused, config.pj_per_bit)},
              {"groups", plan.groups.size()},
              {"savings_vs_baseline", vs_base},
              {"feature_savings_vs_layer_by_layer", feature_vs_own},
              {"per_layer", std::move(layers)},
              {"traffic", fused}};

  out.text = fmt("%s at %lldx%lld, %.0f fps, %.0f pJ/bit, weight buffer %lld B\n", g.name.c_str(),
                 static_cast<long long>(g.input.width), static_cast<long long>(g.input.height), config.fps,
                 config.pj_per_bit, static_cast<long long>(config.weight_buffer));
  out.text += traffic_header();
  out.text += traffic_row((base.name + " layer-by-layer").c_str(), baseline, config.pj_per_bit);
  if (config.baseline_path) out.text += traffic_row((g.name + " layer-by-layer").c_str(), own, config.pj_per_bit);
  out.text += traffic_row((g.name + " fused").c_str(), fused, config.pj_per_bit);
  out.text += fmt("bandwidth savings vs %s: %.1f%%\n", base.name.c_str(), 100.0 * vs_base);
  out.text += fmt("feature traffic reduction vs layer-by-layer: %.1f%%\n", 100.0 * feature_vs_own);
  out.text += "\nlayer  layer-by-layer B      fused B  savings\n";
  for (const auto& l : per_layer.layers) {
    out.text += fmt("%5d  %16lld  %11lld  %6.1f%%\n", l.layer_id, static_cast<long long>(l.baseline_bytes),
                    static_cast<long long>(l.fused_bytes), 100.0 * l.fraction);
  }
  return out;
}

StageOutput run_sweep(const RunConfig& config, const std::vector<Bytes>& sizes) {
  const NetGraph g = load_model(config);
  const auto result = buffer_sweep(g, sizes, config.arch(), config.traffic_options(), config.boundary);
  StageOutput out;
  out.json = {{"model", g.name}, {"points", result.points}};
  out.json["saturation_index"] =
      result.saturation_index ? Json(*result.saturation_index) : Json(nullptr);
  if (result.saturation_index) {
    out.json["saturation_bytes"] = result.points[*result.saturation_index].weight_buffer;
  }
  out.text = sweep_plot_data(out.json);
  return out;
}

std::string sweep_plot_data(const Json& sweep) {
  std::string text = "# weight_buffer_bytes bandwidth_mb_per_s\n";
  for (const auto& p : sweep.at("points")) {
    text += fmt("%lld %.6f\n", static_cast<long long>(p.at("weight_buffer").get<Bytes>()),
                mb(p.at("bandwidth").get<double>()));
  }
  return text;
}

StageOutput full_pipeline(const RunConfig& config) {
  const NetGraph original = load_model(config);
  const bool convert = config.convert.value_or(has_dense_convs(original));
  const NetGraph converted = convert ? to_lightweight(original) : original;

  const GammaTable gammas = load_gammas(config, converted);
  RcnetOptions opts;
  opts.budget = config.weight_buffer;
  opts.overshoot = config.overshoot;
  opts.iterations = config.iterations;
  opts.rescale_first_k = config.rescale_first_k;
  const auto topts = config.traffic_options();
  opts.bytes_per_weight = topts.bytes_per_weight;
  const RcnetResult morphed = rcnet_iterate(converted, gammas, opts);
  const NetGraph& final_graph = morphed.graph;

  const ArchConfig arch = config.arch();
  const FusionPlan plan = execution_plan(final_graph, config);
  const auto tiles = plan_tiles(plan, final_graph, config.feature_half, config.boundary, topts.bytes_per_activation);
  const auto perf = estimate_cycles(final_graph, plan, tiles, arch);
  const auto baseline = layer_by_layer_traffic(original, topts);
  const auto own = layer_by_layer_traffic(final_graph, topts);
  const auto fused = fused_traffic(final_graph, plan, tiles, arch, topts);

  Bytes max_group = 0;
  std::size_t infeasible_tiles = 0;
  for (const auto& grp : plan.groups) max_group = std::max(max_group, grp.weight_bytes);
  for (const auto& t : tiles) infeasible_tiles += t.feasible ? 0 : 1;
  const double feature_reduction = savings_fraction(static_cast<double>(baseline.feature_bytes),
                                                    static_cast<double>(fused.feature_bytes));

  StageOutput out;
  out.json = {
      {"model", original.name},
      {"input", {{"w", original.input.width}, {"h", original.input.height}, {"c", original.input.channels}}},
      {"config",
       {{"weight_buffer_bytes", config.weight_buffer},
        {"feature_half_bytes", config.feature_half},
        {"overshoot", config.overshoot},
        {"iterations", config.iterations},
        {"rescale_first_k", config.rescale_first_k},
        {"fps", config.fps},
        {"pj_per_bit", config.pj_per_bit},
        {"precision_bits", config.precision_bits},
        {"seed", config.seed},
        {"boundary", std::string(to_string(config.boundary))},
        {"gammas", config.gamma_path ? *config.gamma_path : std::string("synthetic")}}},
      {"params",
       {{"original", model_params(original)},
        {"converted", model_params(converted)},
        {"final", model_params(final_graph)}}},
      {"converted", convert},
      {"iterations", morphed.iterations},
      {"plan", plan},
      {"max_group_bytes", max_group},
      {"tiles", tiles},
      {"infeasible_tile_groups", infeasible_tiles},
      {"perf", perf},
      {"traffic",
       {{"original_layer_by_layer", traffic_summary(baseline, config.pj_per_bit)},
        {"final_layer_by_layer", traffic_summary(own, config.pj_per_bit)},
        {"final_fused", traffic_summary(fused, config.pj_per_bit)},
        {"feature_reduction_vs_original", feature_reduction},
        {"bandwidth_savings_vs_original", savings_fraction(baseline.bandwidth(), fused.bandwidth())}}},
      {"final_model", model_to_json(final_graph)}};

  out.text = fmt("%s %lldx%lld\n", original.name.c_str(), static_cast<long long>(original.input.width),
                 static_cast<long long>(original.input.height));
  out.text += fmt("params: original %lld, converted %lld, final %lld\n",
                  static_cast<long long>(model_params(original)), static_cast<long long>(model_params(converted)),
                  static_cast<long long>(model_params(final_graph)));
  out.text += fmt("groups: %zu (largest %lld B, budget %lld B), tile-infeasible groups: %zu\n", plan.groups.size(),
                  static_cast<long long>(max_group), static_cast<long long>(config.weight_buffer), infeasible_tiles);
  out.text += traffic_header();
  out.text += traffic_row("original layer-by-layer", baseline, config.pj_per_bit);
  out.text += traffic_row("final layer-by-layer", own, config.pj_per_bit);
  out.text += traffic_row("final fused", fused, config.pj_per_bit);
  out.text += fmt("feature traffic reduction vs original: %.1f%%\n", 100.0 * feature_reduction);
  out.text += fmt("%.2f fps, utilization %.3f, %.1f GOPS\n", perf.fps, perf.utilization, perf.achieved_gops);
  return out;
}

}  // namespace rcfuse
