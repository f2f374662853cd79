#include "dasgil/losses.hpp"

#include <nlohmann/json.hpp>

namespace dasgil::losses {

void LossWeights::validate() const {
  for (double v : {lambda_T, lambda_D, lambda_S})
    require(std::isfinite(v) && v >= 0, ErrorCode::InvalidConfig, "loss weights must be finite and nonnegative");
  require(std::isfinite(default_margin) && default_margin > 0, ErrorCode::InvalidConfig, "margin must be positive");
  for (const auto& [layer, m] : margins)
    require(std::isfinite(m) && m > 0, ErrorCode::InvalidConfig, "margin for layer " + std::to_string(layer) + " must be positive");
}

void to_json(nlohmann::json& j, const LossWeights& w) {
  nlohmann::json margins = nlohmann::json::object();
  for (const auto& [layer, m] : w.margins) margins[std::to_string(layer)] = m;
  j = {{"lambda_T", w.lambda_T},
       {"lambda_D", w.lambda_D},
       {"lambda_S", w.lambda_S},
       {"default_margin", w.default_margin},
       {"margins", margins}};
}

void from_json(const nlohmann::json& j, LossWeights& w) {
  w = LossWeights{};
  for (const auto& [k, v] : j.items())
    require(k == "lambda_T" || k == "lambda_D" || k == "lambda_S" || k == "default_margin" || k == "margins",
            ErrorCode::InvalidConfig, "unknown weights key '" + k + "'");
  w.lambda_T = j.value("lambda_T", w.lambda_T);
  w.lambda_D = j.value("lambda_D", w.lambda_D);
  w.lambda_S = j.value("lambda_S", w.lambda_S);
  w.default_margin = j.value("default_margin", w.default_margin);
  if (j.contains("margins"))
    for (const auto& [k, v] : j.at("margins").items()) w.margins[std::stoi(k)] = v.get<double>();
  w.validate();
}

}  // namespace dasgil::losses
