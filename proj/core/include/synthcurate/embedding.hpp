#pragma once

#include <cstddef>
#include <vector>

namespace synthcurate {

// Feature vector from an embedding backend.
struct EmbeddingVector {
  std::vector<double> values;

  std::size_t dim() const noexcept { return values.size(); }
  double norm() const noexcept;
  // dim > 0, all values finite, norm > 0.
  bool valid() const noexcept;
  // Throws InvalidArgument describing the first violated invariant.
  void validate() const;
  EmbeddingVector normalized() const;
};

}  // namespace synthcurate
