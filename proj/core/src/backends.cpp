#include "synthcurate/backends.hpp"

#include "synthcurate/errors.hpp"

namespace synthcurate {

JudgeChoice parse_judge_choice(std::string_view answer) {
  constexpr std::string_view kSpace = " \t\r\n";
  const auto first = answer.find_first_not_of(kSpace);
  if (first == std::string_view::npos) throw BackendError("judge returned an empty answer");
  const auto last = answer.find_last_not_of(kSpace);
  const auto trimmed = answer.substr(first, last - first + 1);
  if (trimmed == "A") return JudgeChoice::A;
  if (trimmed == "B") return JudgeChoice::B;
  throw BackendError("judge answer is neither \"A\" nor \"B\": " + std::string(trimmed.substr(0, 64)));
}

}  // namespace synthcurate
