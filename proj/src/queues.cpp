#include "calnr/queues.hpp"

#include <algorithm>

#include "calnr/common.hpp"

namespace calnr {

PositiveQueues::PositiveQueues(std::size_t num_categories, std::size_t dim,
                               std::size_t capacity, std::size_t min_size)
    : rings_(num_categories), dim_(dim), capacity_(capacity),
      min_size_(min_size) {
  if (dim == 0) throw usage_error("PositiveQueues: dim must be >= 1");
}

std::size_t PositiveQueues::size(std::size_t category) const {
  return rings_.at(category).count;
}

void PositiveQueues::push(std::size_t category, std::span<const double> repr) {
  if (repr.size() != dim_)
    throw data_error("PositiveQueues::push: representation dim mismatch");
  if (capacity_ == 0) return;
  Ring& ring = rings_.at(category);
  if (ring.buf.empty()) ring.buf.resize(capacity_ * dim_);
  std::size_t slot;
  if (ring.count < capacity_) {
    slot = (ring.head + ring.count) % capacity_;
    ++ring.count;
  } else {
    slot = ring.head;
    ring.head = (ring.head + 1) % capacity_;
  }
  std::copy(repr.begin(), repr.end(), ring.buf.begin() + slot * dim_);
}

std::span<const double> PositiveQueues::entry(std::size_t category,
                                              std::size_t i) const {
  const Ring& ring = rings_.at(category);
  if (i >= ring.count)
    throw data_error("PositiveQueues::entry: index out of range");
  const std::size_t slot = (ring.head + i) % capacity_;
  return {ring.buf.data() + slot * dim_, dim_};
}

void PositiveQueues::clear() {
  for (Ring& ring : rings_) {
    ring.head = 0;
    ring.count = 0;
  }
}

} // namespace calnr
