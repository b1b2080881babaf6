#include "rcfuse/serialize.hpp"

#include <fstream>
#include <sstream>

namespace rcfuse {

namespace {

template <class T>
T field(const Json& j, const char* key, const std::string& where) {
  if (!j.is_object() || !j.contains(key)) throw ParseError(where + ": missing field '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ParseError(where + ": field '" + key + "' has the wrong type");
  }
}

template <class T>
T field_or(const Json& j, const char* key, T fallback, const std::string& where) {
  if (!j.contains(key) || j.at(key).is_null()) return fallback;
  return field<T>(j, key, where);
}

}  // namespace

Json model_to_json(const NetGraph& graph) {
  Json layers = Json::array();
  for (const auto& l : graph.layers) {
    Json o;
    o["id"] = l.id;
    o["kind"] = std::string(to_string(l.kind));
    o["k"] = l.kernel;
    o["stride"] = l.stride;
    if (l.kind == LayerKind::Conv || l.kind == LayerKind::PointwiseConv ||
        l.kind == LayerKind::OutputHead) {
      o["out_channels"] = l.out_channels;
    }
    if (l.pool != 1) o["pool"] = l.pool;
    if (!l.has_bn_relu) o["bn"] = false;
    if (l.residual_from) o["residual_from"] = *l.residual_from;
    layers.push_back(std::move(o));
  }
  return Json{{"name", graph.name},
              {"input", {{"w", graph.input.width}, {"h", graph.input.height}, {"c", graph.input.channels}}},
              {"layers", std::move(layers)}};
}

NetGraph model_from_json(const Json& j) {
  if (!j.is_object()) throw ParseError("model: top level must be an object");
  NetGraph g;
  g.name = field_or<std::string>(j, "name", "", "model");
  const Json input = field<Json>(j, "input", "model");
  g.input = {field<std::int64_t>(input, "w", "model.input"), field<std::int64_t>(input, "h", "model.input"),
             field<std::int64_t>(input, "c", "model.input")};
  const Json layers = field<Json>(j, "layers", "model");
  if (!layers.is_array()) throw ParseError("model: 'layers' must be an array");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const Json& o = layers[i];
    const std::string where = "model.layers[" + std::to_string(i) + "]";
    LayerNode l;
    l.id = field<int>(o, "id", where);
    try {
      l.kind = parse_layer_kind(field<std::string>(o, "kind", where));
    } catch (const std::invalid_argument& e) {
      throw ParseError(where + ": " + e.what());
    }
    const bool pool_node = l.kind == LayerKind::MaxPool;
    l.kernel = field_or<int>(o, "k", pool_node ? 2 : 1, where);
    l.stride = field_or<int>(o, "stride", pool_node ? 2 : 1, where);
    l.pool = field_or<int>(o, "pool", 1, where);
    l.out_channels = field_or<std::int64_t>(o, "out_channels", 0, where);
    l.has_bn_relu = field_or<bool>(o, "bn", l.kind != LayerKind::OutputHead, where);
    if (o.contains("residual_from") && !o.at("residual_from").is_null()) {
      l.residual_from = field<int>(o, "residual_from", where);
    }
    g.layers.push_back(l);
  }
  const auto problems = validate(g);
  if (!problems.empty()) {
    std::string msg = "model '" + g.name + "' is invalid:";
    for (const auto& p : problems) msg += "\n  " + p;
    throw ShapeError(msg);
  }
  return infer_shapes(std::move(g));
}

NetGraph parse_model(const std::string& text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("model: ") + e.what());
  }
  return model_from_json(j);
}

NetGraph read_model_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::ios_base::failure("cannot open model file '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_model(buf.str());
}

void write_model_file(const std::string& path, const NetGraph& graph) {
  std::ofstream out(path);
  if (!out) throw std::ios_base::failure("cannot write model file '" + path + "'");
  out << dump(model_to_json(graph));
}

std::string dump(const Json& j) { return j.dump(2) + "\n"; }

// ---------------------------------------------------------------------------

void to_json(Json& j, const FusionGroup& g) {
  j = {{"layer_ids", g.layer_ids},
       {"weight_bytes", g.weight_bytes},
       {"downsample_count", g.downsample_count},
       {"contains_first_layer", g.contains_first_layer},
       {"degenerate", g.degenerate}};
}
void from_json(const Json& j, FusionGroup& g) {
  g.layer_ids = field<std::vector<int>>(j, "layer_ids", "group");
  g.weight_bytes = field<Bytes>(j, "weight_bytes", "group");
  g.downsample_count = field<int>(j, "downsample_count", "group");
  g.contains_first_layer = field<bool>(j, "contains_first_layer", "group");
  g.degenerate = field<bool>(j, "degenerate", "group");
}

void to_json(Json& j, const FusionPlan& p) {
  j = {{"budget_bytes", p.budget_bytes},
       {"overshoot", p.overshoot},
       {"threshold_bytes", p.threshold()},
       {"groups", p.groups},
       {"warnings", p.warnings}};
}
void from_json(const Json& j, FusionPlan& p) {
  p.budget_bytes = field<Bytes>(j, "budget_bytes", "plan");
  p.overshoot = field<double>(j, "overshoot", "plan");
  p.groups = field<std::vector<FusionGroup>>(j, "groups", "plan");
  p.warnings = field_or<std::vector<std::string>>(j, "warnings", {}, "plan");
}

void to_json(Json& j, const LayerOccupancy& o) {
  j = {{"layer_id", o.layer_id}, {"input_bytes", o.input_bytes}, {"output_bytes", o.output_bytes}};
}
void from_json(const Json& j, LayerOccupancy& o) {
  o.layer_id = field<int>(j, "layer_id", "occupancy");
  o.input_bytes = field<Bytes>(j, "input_bytes", "occupancy");
  o.output_bytes = field<Bytes>(j, "output_bytes", "occupancy");
}

void to_json(Json& j, const TilePlan& t) {
  j = {{"group", t.group_index},
       {"tile_width", t.tile_width},
       {"tile_height", t.tile_height},
       {"max_tile_height", t.max_tile_height},
       {"row_alignment", t.row_alignment},
       {"tile_count", t.tile_count},
       {"frame_height", t.frame_height},
       {"occupancy", t.occupancy},
       {"boundary", std::string(to_string(t.boundary))},
       {"feasible", t.feasible}};
}
void from_json(const Json& j, TilePlan& t) {
  t.group_index = field<std::size_t>(j, "group", "tile");
  t.tile_width = field<std::int64_t>(j, "tile_width", "tile");
  t.tile_height = field<std::int64_t>(j, "tile_height", "tile");
  t.max_tile_height = field<std::int64_t>(j, "max_tile_height", "tile");
  t.row_alignment = field<std::int64_t>(j, "row_alignment", "tile");
  t.tile_count = field<std::int64_t>(j, "tile_count", "tile");
  t.frame_height = field<std::int64_t>(j, "frame_height", "tile");
  t.occupancy = field<std::vector<LayerOccupancy>>(j, "occupancy", "tile");
  t.boundary = parse_boundary_policy(field<std::string>(j, "boundary", "tile"));
  t.feasible = field<bool>(j, "feasible", "tile");
}

namespace {
BufferHalf parse_half(const std::string& s) {
  if (s == "left") return BufferHalf::Left;
  if (s == "right") return BufferHalf::Right;
  throw ParseError("schedule: unknown buffer half '" + s + "'");
}
}  // namespace

void to_json(Json& j, const ScheduleStep& s) {
  j = {{"tile", s.tile},
       {"layer_id", s.layer_id},
       {"input_half", std::string(to_string(s.input_half))},
       {"output_half", std::string(to_string(s.output_half))}};
}
void from_json(const Json& j, ScheduleStep& s) {
  s.tile = field<std::int64_t>(j, "tile", "step");
  s.layer_id = field<int>(j, "layer_id", "step");
  s.input_half = parse_half(field<std::string>(j, "input_half", "step"));
  s.output_half = parse_half(field<std::string>(j, "output_half", "step"));
}

void to_json(Json& j, const PingPongSchedule& s) {
  j = {{"group", s.group_index},
       {"steps", s.steps},
       {"external_loads", s.external_loads},
       {"external_stores", s.external_stores}};
}
void from_json(const Json& j, PingPongSchedule& s) {
  s.group_index = field<std::size_t>(j, "group", "schedule");
  s.steps = field<std::vector<ScheduleStep>>(j, "steps", "schedule");
  s.external_loads = field<std::int64_t>(j, "external_loads", "schedule");
  s.external_stores = field<std::int64_t>(j, "external_stores", "schedule");
}

void to_json(Json& j, const ArchConfig& a) {
  j = {{"pe_blocks", a.pe_blocks},
       {"block_rows", a.block_rows},
       {"block_cols", a.block_cols},
       {"clock_hz", a.clock_hz},
       {"weight_buffer_bytes", a.weight_buffer_bytes},
       {"feature_half_bytes", a.feature_half_bytes},
       {"banks", a.banks},
       {"act_bits", a.act_bits},
       {"weight_bits", a.weight_bits},
       {"accum_bits", a.accum_bits}};
}
void from_json(const Json& j, ArchConfig& a) {
  const ArchConfig d;
  a.pe_blocks = field_or<int>(j, "pe_blocks", d.pe_blocks, "arch");
  a.block_rows = field_or<int>(j, "block_rows", d.block_rows, "arch");
  a.block_cols = field_or<int>(j, "block_cols", d.block_cols, "arch");
  a.clock_hz = field_or<double>(j, "clock_hz", d.clock_hz, "arch");
  a.weight_buffer_bytes = field_or<Bytes>(j, "weight_buffer_bytes", d.weight_buffer_bytes, "arch");
  a.feature_half_bytes = field_or<Bytes>(j, "feature_half_bytes", d.feature_half_bytes, "arch");
  a.banks = field_or<int>(j, "banks", d.banks, "arch");
  a.act_bits = field_or<int>(j, "act_bits", d.act_bits, "arch");
  a.weight_bits = field_or<int>(j, "weight_bits", d.weight_bits, "arch");
  a.accum_bits = field_or<int>(j, "accum_bits", d.accum_bits, "arch");
}

void to_json(Json& j, const LayerPerf& l) {
  j = {{"layer_id", l.layer_id}, {"cycles", l.cycles}, {"macs", l.macs}, {"utilization", l.utilization}};
}
void from_json(const Json& j, LayerPerf& l) {
  l.layer_id = field<int>(j, "layer_id", "perf");
  l.cycles = field<std::int64_t>(j, "cycles", "perf");
  l.macs = field<std::int64_t>(j, "macs", "perf");
  l.utilization = field<double>(j, "utilization", "perf");
}

void to_json(Json& j, const PerfReport& r) {
  j = {{"layers", r.layers},
       {"total_cycles", r.total_cycles},
       {"total_macs", r.total_macs},
       {"utilization", r.utilization},
       {"achieved_gops", r.achieved_gops},
       {"peak_gops", r.peak_gops},
       {"fps", r.fps},
       {"low_utilization", r.low_utilization}};
}
void from_json(const Json& j, PerfReport& r) {
  r.layers = field<std::vector<LayerPerf>>(j, "layers", "perf");
  r.total_cycles = field<std::int64_t>(j, "total_cycles", "perf");
  r.total_macs = field<std::int64_t>(j, "total_macs", "perf");
  r.utilization = field<double>(j, "utilization", "perf");
  r.achieved_gops = field<double>(j, "achieved_gops", "perf");
  r.peak_gops = field<double>(j, "peak_gops", "perf");
  r.fps = field<double>(j, "fps", "perf");
  r.low_utilization = field<std::vector<int>>(j, "low_utilization", "perf");
}

void to_json(Json& j, const LayerTraffic& l) {
  j = {{"layer_id", l.layer_id},
       {"weight_bytes", l.weight_bytes},
       {"feature_in_bytes", l.feature_in_bytes},
       {"feature_out_bytes", l.feature_out_bytes}};
}
void from_json(const Json& j, LayerTraffic& l) {
  l.layer_id = field<int>(j, "layer_id", "traffic");
  l.weight_bytes = field<Bytes>(j, "weight_bytes", "traffic");
  l.feature_in_bytes = field<Bytes>(j, "feature_in_bytes", "traffic");
  l.feature_out_bytes = field<Bytes>(j, "feature_out_bytes", "traffic");
}

void to_json(Json& j, const GroupTraffic& g) {
  j = {{"group", g.group},
       {"weight_bytes", g.weight_bytes},
       {"feature_bytes", g.feature_bytes},
       {"mode", g.mode == GroupMode::Fused ? "fused" : "layer_by_layer"},
       {"weights_per_tile", g.weights_per_tile}};
}
void from_json(const Json& j, GroupTraffic& g) {
  g.group = field<std::size_t>(j, "group", "group traffic");
  g.weight_bytes = field<Bytes>(j, "weight_bytes", "group traffic");
  g.feature_bytes = field<Bytes>(j, "feature_bytes", "group traffic");
  const auto mode = field<std::string>(j, "mode", "group traffic");
  if (mode != "fused" && mode != "layer_by_layer") throw ParseError("group traffic: unknown mode '" + mode + "'");
  g.mode = mode == "fused" ? GroupMode::Fused : GroupMode::LayerByLayer;
  g.weights_per_tile = field<bool>(j, "weights_per_tile", "group traffic");
}

void to_json(Json& j, const TrafficReport& r) {
  j = {{"layers", r.layers},
       {"groups", r.groups},
       {"weight_bytes", r.weight_bytes},
       {"feature_bytes", r.feature_bytes},
       {"total_bytes", r.total_bytes},
       {"fps", r.fps}};
}
void from_json(const Json& j, TrafficReport& r) {
  r.layers = field<std::vector<LayerTraffic>>(j, "layers", "traffic");
  r.groups = field<std::vector<GroupTraffic>>(j, "groups", "traffic");
  r.weight_bytes = field<Bytes>(j, "weight_bytes", "traffic");
  r.feature_bytes = field<Bytes>(j, "feature_bytes", "traffic");
  r.total_bytes = field<Bytes>(j, "total_bytes", "traffic");
  r.fps = field<double>(j, "fps", "traffic");
}

void to_json(Json& j, const SweepPoint& p) {
  j = {{"weight_buffer", p.weight_buffer},
       {"groups", p.groups},
       {"planned_bandwidth", p.planned_bandwidth},
       {"bandwidth", p.bandwidth},
       {"feature_bandwidth", p.feature_bandwidth},
       {"weight_bandwidth", p.weight_bandwidth},
       {"saturated", p.saturated}};
}
void from_json(const Json& j, SweepPoint& p) {
  p.weight_buffer = field<Bytes>(j, "weight_buffer", "sweep");
  p.groups = field<std::size_t>(j, "groups", "sweep");
  p.planned_bandwidth = field<double>(j, "planned_bandwidth", "sweep");
  p.bandwidth = field<double>(j, "bandwidth", "sweep");
  p.feature_bandwidth = field<double>(j, "feature_bandwidth", "sweep");
  p.weight_bandwidth = field<double>(j, "weight_bandwidth", "sweep");
  p.saturated = field<bool>(j, "saturated", "sweep");
}

void to_json(Json& j, const ModelStats& s) {
  j = {{"params", s.params}, {"macs", s.macs}, {"ops", s.ops()}, {"feature_io_bytes", s.feature_io_bytes}};
}

void to_json(Json& j, const IterationReport& r) {
  j = {{"iteration", r.iteration},
       {"plan", r.plan},
       {"group_bytes_before", r.group_bytes_before},
       {"group_bytes_after", r.group_bytes_after},
       {"channels_removed", r.channels_removed},
       {"params_before", r.params_before},
       {"params_after_prune", r.params_after_prune},
       {"params_after", r.params_after},
       {"rescaled", r.rescaled},
       {"rescale_factor", r.rescale_factor}};
}

void to_json(Json& j, const GuidelineViolation& v) {
  j = {{"guideline", v.guideline}, {"group", v.group}, {"layer_ids", v.layer_ids}, {"message", v.message}};
}

void to_json(Json& j, const ResidualFix& f) {
  const char* mode = f.mode == ResidualMode::Equal              ? "equal"
                     : f.mode == ResidualMode::DiscardSkipExtra ? "discard_skip_extra"
                                                                : "pass_conv_extra";
  j = {{"add_id", f.add_id},
       {"conv_channels", f.conv_channels},
       {"skip_channels", f.skip_channels},
       {"summed", f.summed},
       {"discarded", f.discarded},
       {"passed_through", f.passed_through},
       {"mode", mode}};
}

}  // namespace rcfuse
