#include "synthcurate/embedding.hpp"

#include <cmath>

#include "synthcurate/errors.hpp"

namespace synthcurate {

double EmbeddingVector::norm() const noexcept {
  double sum = 0.0;
  for (double v : values) sum += v * v;
  return std::sqrt(sum);
}

bool EmbeddingVector::valid() const noexcept {
  if (values.empty()) return false;
  for (double v : values) {
    if (!std::isfinite(v)) return false;
  }
  const double n = norm();
  return std::isfinite(n) && n > 0.0;
}

void EmbeddingVector::validate() const {
  if (values.empty()) throw InvalidArgument("embedding has dimension 0");
  for (double v : values) {
    if (!std::isfinite(v)) throw InvalidArgument("embedding has a non-finite component");
  }
  if (!(norm() > 0.0)) throw InvalidArgument("embedding has zero norm");
}

EmbeddingVector EmbeddingVector::normalized() const {
  validate();
  const double n = norm();
  EmbeddingVector out{values};
  for (auto& v : out.values) v /= n;
  return out;
}

}  // namespace synthcurate
