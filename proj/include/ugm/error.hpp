#pragma once

#include <stdexcept>
#include <string>

namespace ugm {

/// Malformed input file or inconsistent dimensions.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Well-formed input whose contents violate a model invariant
/// (non-finite samples, unlabeled test pixels, too few pixels per class...).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A precondition of an algorithm does not hold (non-submodular edge,
/// non-metric pairwise term, instance too large for enumeration...).
class ModelError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace ugm
