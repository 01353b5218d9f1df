#pragma once

#include <stdexcept>
#include <string>

namespace calnr {

// Error categories map onto CLI exit codes: usage=1, data=2, numeric=3.
struct error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct usage_error : error {
  using error::error;
};
struct data_error : error {
  using error::error;
};
struct numeric_error : error {
  using error::error;
};

} // namespace calnr
