#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace modc {

enum class Errc {
  out_of_pool_memory,
  out_of_bounds,
  misaligned_address,
  queue_full,
  not_owner,
  already_member,
  not_member,
  conflicting_publish,
  duplicate_fn_id,
  unknown_function,
  unknown_job,
  bad_probabilities,
  endpoint_out_of_range,
  config_error,
  table_full,
  task_fault,
};

std::string_view to_string(Errc code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace modc
