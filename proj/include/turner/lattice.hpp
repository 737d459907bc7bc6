#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "turner/errors.hpp"

namespace turner {

/// n x |labels| matrix of per-position scores. Scorers emit log-softmax rows
/// (logsumexp(row) = 0); summed lattices are unnormalized but still decodable.
class TagLattice {
public:
  TagLattice() = default;
  TagLattice(int n, int num_labels)
      : n_(n), num_labels_(num_labels),
        scores_(static_cast<std::size_t>(n) * static_cast<std::size_t>(num_labels), 0.0) {}

  int length() const { return n_; }
  int num_labels() const { return num_labels_; }

  double& at(int pos, int label) {
    return scores_[static_cast<std::size_t>(pos) * static_cast<std::size_t>(num_labels_) +
                   static_cast<std::size_t>(label)];
  }
  double at(int pos, int label) const {
    return scores_[static_cast<std::size_t>(pos) * static_cast<std::size_t>(num_labels_) +
                   static_cast<std::size_t>(label)];
  }

  const std::vector<double>& data() const { return scores_; }

  /// True when every row is a log-softmax output within tol.
  bool is_log_normalized(double tol = 1e-6) const {
    for (int i = 0; i < n_; ++i) {
      double max = at(i, 0);
      for (int l = 1; l < num_labels_; ++l) max = std::max(max, at(i, l));
      double sum = 0.0;
      for (int l = 0; l < num_labels_; ++l) sum += std::exp(at(i, l) - max);
      if (std::abs(max + std::log(sum)) > tol) return false;
    }
    return true;
  }

  TagLattice& operator+=(const TagLattice& other) {
    if (n_ != other.n_ || num_labels_ != other.num_labels_)
      throw MismatchError("TagLattice sum: shape mismatch");
    for (std::size_t i = 0; i < scores_.size(); ++i) scores_[i] += other.scores_[i];
    return *this;
  }

private:
  int n_ = 0;
  int num_labels_ = 0;
  std::vector<double> scores_;
};

}  // namespace turner
