#pragma once

#include <stdexcept>
#include <string>

#include <json.hpp>

#include "rcfuse/convert.hpp"
#include "rcfuse/fusion.hpp"
#include "rcfuse/netir.hpp"
#include "rcfuse/prune.hpp"
#include "rcfuse/sim.hpp"
#include "rcfuse/tiling.hpp"
#include "rcfuse/traffic.hpp"

namespace rcfuse {

using Json = nlohmann::json;

/// Malformed input text.
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Model description: name, input {w, h, c}, layers [{id, kind, k, stride,
/// out_channels, pool?, bn?, residual_from?}]. Inferred shapes are not written.
Json model_to_json(const NetGraph& graph);
/// Parses and infers shapes. Throws ParseError on bad structure, ShapeError or
/// DanglingResidual when the layers do not fit together.
NetGraph model_from_json(const Json& j);
NetGraph parse_model(const std::string& text);
NetGraph read_model_file(const std::string& path);
void write_model_file(const std::string& path, const NetGraph& graph);

std::string dump(const Json& j);

void to_json(Json& j, const FusionGroup& g);
void from_json(const Json& j, FusionGroup& g);
void to_json(Json& j, const FusionPlan& p);
void from_json(const Json& j, FusionPlan& p);

void to_json(Json& j, const LayerOccupancy& o);
void from_json(const Json& j, LayerOccupancy& o);
void to_json(Json& j, const TilePlan& t);
void from_json(const Json& j, TilePlan& t);
void to_json(Json& j, const ScheduleStep& s);
void from_json(const Json& j, ScheduleStep& s);
void to_json(Json& j, const PingPongSchedule& s);
void from_json(const Json& j, PingPongSchedule& s);

void to_json(Json& j, const ArchConfig& a);
void from_json(const Json& j, ArchConfig& a);
void to_json(Json& j, const LayerPerf& l);
void from_json(const Json& j, LayerPerf& l);
void to_json(Json& j, const PerfReport& r);
void from_json(const Json& j, PerfReport& r);

void to_json(Json& j, const LayerTraffic& l);
void from_json(const Json& j, LayerTraffic& l);
void to_json(Json& j, const GroupTraffic& g);
void from_json(const Json& j, GroupTraffic& g);
void to_json(Json& j, const TrafficReport& r);
void from_json(const Json& j, TrafficReport& r);
void to_json(Json& j, const SweepPoint& p);
void from_json(const Json& j, SweepPoint& p);

void to_json(Json& j, const ModelStats& s);
void to_json(Json& j, const IterationReport& r);
void to_json(Json& j, const GuidelineViolation& v);
void to_json(Json& j, const ResidualFix& f);

}  // namespace rcfuse
