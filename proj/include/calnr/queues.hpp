#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace calnr {

// Per-category bounded FIFO of detached semantic representations, fed only
// from samples whose label for that category is observed positive. Entries
// are copies; later parameter updates never alter stored content.
class PositiveQueues {
public:
  PositiveQueues() = default;
  PositiveQueues(std::size_t num_categories, std::size_t dim,
                 std::size_t capacity, std::size_t min_size);

  std::size_t num_categories() const { return rings_.size(); }
  std::size_t dim() const { return dim_; }
  std::size_t capacity() const { return capacity_; }
  std::size_t min_size() const { return min_size_; }

  std::size_t size(std::size_t category) const;
  // enough entries to produce a similarity vote
  bool ready(std::size_t category) const {
    return size(category) >= min_size_;
  }

  // Appends a detached copy; evicts the oldest entry beyond capacity.
  void push(std::size_t category, std::span<const double> repr);

  // i-th entry in insertion order, oldest first.
  std::span<const double> entry(std::size_t category, std::size_t i) const;

  void clear();

private:
  struct Ring {
    std::vector<double> buf; // capacity * dim
    std::size_t head = 0;    // index of oldest entry
    std::size_t count = 0;
  };
  std::vector<Ring> rings_;
  std::size_t dim_ = 0;
  std::size_t capacity_ = 0;
  std::size_t min_size_ = 0;
};

} // namespace calnr
