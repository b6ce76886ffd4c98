#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

#include "dreid/degrade.hpp"

namespace dreid::degrade {

/// [{"name": ..., "params": {...}}, ...]; seeds ride inside params.
nlohmann::json trace_to_json(const OpTrace& trace);
OpTrace trace_from_json(const nlohmann::json& ops);

nlohmann::json blur_spec_to_json(const kernelforge::BlurSpec& spec);
kernelforge::BlurSpec blur_spec_from_json(const nlohmann::json& params);

/// One JSON-lines record: {"image_id", "sub_seed", "ops"}.
std::string trace_line(const std::string& image_id, std::uint64_t sub_seed,
                       const OpTrace& trace);

}  // namespace dreid::degrade
