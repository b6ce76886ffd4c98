#include "dreid/trace_json.hpp"

#include "dreid/errors.hpp"

namespace dreid::degrade {

using nlohmann::json;
namespace kf = kernelforge;

json blur_spec_to_json(const kf::BlurSpec& spec) {
  json j;
  j["family"] = std::string(kf::to_string(kf::family_of(spec)));
  std::visit(
      [&j](const auto& s) {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, kf::GaussianBlurSpec>) {
          j["side"] = s.side;
          j["sigma_x"] = s.sigma_x;
          j["sigma_y"] = s.sigma_y;
          j["theta"] = s.theta;
        } else if constexpr (std::is_same_v<T, kf::GeneralizedGaussianSpec>) {
          j["side"] = s.side;
          j["sigma_x"] = s.sigma_x;
          j["sigma_y"] = s.sigma_y;
          j["beta"] = s.beta;
          j["theta"] = s.theta;
          j["noise_low"] = s.noise_low;
          j["noise_high"] = s.noise_high;
          j["noise_enabled"] = s.noise_enabled;
        } else if constexpr (std::is_same_v<T, kf::MotionBlurSpec>) {
          j["side"] = s.side;
          j["theta"] = s.theta;
          j["direction"] = s.direction;
          j["shift"] = {s.shift[0], s.shift[1]};
        } else {
          j["radius"] = s.radius;
          j["gauss_sigma"] = s.gauss_sigma;
        }
      },
      spec);
  return j;
}

kf::BlurSpec blur_spec_from_json(const json& p) {
  switch (kf::parse_blur_family(p.at("family").get<std::string>())) {
    case kf::BlurFamily::Gaussian:
      return kf::GaussianBlurSpec{p.at("side").get<int>(),
                                  p.at("sigma_x").get<double>(),
                                  p.at("sigma_y").get<double>(),
                                  p.at("theta").get<double>()};
    case kf::BlurFamily::GeneralizedGaussian:
      return kf::GeneralizedGaussianSpec{
          p.at("side").get<int>(),          p.at("sigma_x").get<double>(),
          p.at("sigma_y").get<double>(),    p.at("beta").get<double>(),
          p.at("theta").get<double>(),      p.at("noise_low").get<double>(),
          p.at("noise_high").get<double>(), p.at("noise_enabled").get<bool>()};
    case kf::BlurFamily::Motion:
      return kf::MotionBlurSpec{
          p.at("side").get<int>(), p.at("theta").get<double>(),
          p.at("direction").get<double>(),
          {p.at("shift").at(0).get<int>(), p.at("shift").at(1).get<int>()}};
    case kf::BlurFamily::Defocus:
      return kf::DefocusSpec{p.at("radius").get<int>(),
                             p.at("gauss_sigma").get<double>()};
  }
  throw ParameterError("unknown blur family");
}

json trace_to_json(const OpTrace& trace) {
  json ops = json::array();
  for (const TraceOp& op : trace.ops) {
    json params = std::visit(
        [](const auto& o) -> json {
          using T = std::decay_t<decltype(o)>;
          if constexpr (std::is_same_v<T, BlurOp>) {
            json p = blur_spec_to_json(o.spec);
            p["seed"] = o.seed;
            return p;
          } else if constexpr (std::is_same_v<T, DownscaleOp>) {
            return {{"factor", o.spec.factor},
                    {"method", std::string(to_string(o.spec.method))}};
          } else if constexpr (std::is_same_v<T, NoiseOp>) {
            return {{"sigma", o.spec.sigma}, {"seed", o.seed}};
          } else if constexpr (std::is_same_v<T, JpegOp>) {
            return {{"quality", o.spec.quality}};
          } else if constexpr (std::is_same_v<T, ResizeOp>) {
            return {{"side", o.side}, {"method", "bicubic"}};
          } else {
            return {{"factor", o.factor}};
          }
        },
        op);
    ops.push_back({{"name", std::string(op_name(op))}, {"params", params}});
  }
  return ops;
}

OpTrace trace_from_json(const json& ops) {
  OpTrace trace;
  try {
    for (const json& entry : ops) {
      const std::string name = entry.at("name").get<std::string>();
      const json& p = entry.at("params");
      if (name == "blur") {
        trace.ops.push_back(
            BlurOp{blur_spec_from_json(p), p.at("seed").get<std::uint64_t>()});
      } else if (name == "downscale") {
        trace.ops.push_back(DownscaleOp{
            {p.at("factor").get<int>(),
             parse_downscale_method(p.at("method").get<std::string>())}});
      } else if (name == "noise") {
        trace.ops.push_back(NoiseOp{{p.at("sigma").get<double>()},
                                    p.at("seed").get<std::uint64_t>()});
      } else if (name == "jpeg") {
        trace.ops.push_back(JpegOp{{p.at("quality").get<int>()}});
      } else if (name == "resize") {
        trace.ops.push_back(ResizeOp{p.at("side").get<int>()});
      } else if (name == "resample") {
        trace.ops.push_back(ResampleOp{p.at("factor").get<int>()});
      } else {
        throw ParameterError("unknown trace op '" + name + "'");
      }
    }
  } catch (const json::exception& e) {
    throw ParameterError(std::string("malformed trace: ") + e.what());
  }
  return trace;
}

std::string trace_line(const std::string& image_id, std::uint64_t sub_seed,
                       const OpTrace& trace) {
  json j;
  j["image_id"] = image_id;
  j["sub_seed"] = sub_seed;
  j["ops"] = trace_to_json(trace);
  return j.dump();
}

}  // namespace dreid::degrade
