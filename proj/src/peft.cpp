#include "tsft/peft.hpp"

namespace tsft {

std::string to_string(StrategyKind k) {
  switch (k) {
    case StrategyKind::kFull: return "full";
    case StrategyKind::kLora: return "lora";
    case StrategyKind::kLinear: return "linear";
    case StrategyKind::kPTuning: return "ptuning";
    case StrategyKind::kGenP: return "gen-p";
  }
  return "?";
}

std::string to_string(Aggregator a) {
  switch (a) {
    case Aggregator::kTransformer: return "transformer";
    case Aggregator::kRnn: return "rnn";
    case Aggregator::kMlp: return "mlp";
    case Aggregator::kConstant: return "constant";
  }
  return "?";
}

StrategyKind parse_strategy(const std::string& s) {
  if (s == "full") return StrategyKind::kFull;
  if (s == "lora") return StrategyKind::kLora;
  if (s == "linear") return StrategyKind::kLinear;
  if (s == "ptuning") return StrategyKind::kPTuning;
  if (s == "gen-p") return StrategyKind::kGenP;
  throw std::invalid_argument("unknown strategy '" + s + "' (expected full|lora|linear|ptuning|gen-p)");
}

Aggregator parse_aggregator(const std::string& s) {
  if (s == "transformer") return Aggregator::kTransformer;
  if (s == "rnn") return Aggregator::kRnn;
  if (s == "mlp") return Aggregator::kMlp;
  if (s == "constant") return Aggregator::kConstant;
  throw std::invalid_argument("unknown aggregator '" + s + "' (expected transformer|rnn|mlp|constant)");
}

}  // namespace tsft
