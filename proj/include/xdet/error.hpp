#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>

namespace xdet {

enum class ErrorKind {
  io,
  schema,
  invariant,
  empty_dataset,
  template_mismatch,
  group_too_small,
  non_finite_gradient,
  missing_prediction,
  duplicate_prediction,
  unknown_record,
  invalid_crop,
  too_small,
  no_fake_records,
  empty_reference,
  id_mismatch,
  invalid_argument,
};

const char* to_string(ErrorKind kind);

/// Every library failure is reported through this exception. `line` is set
/// for errors tied to a position in an input file (1-based), `record_id` for
/// errors tied to a specific record.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message,
        std::optional<std::size_t> line = std::nullopt,
        std::optional<std::string> record_id = std::nullopt);

  ErrorKind kind() const noexcept { return kind_; }
  /// Message without the kind/line/id decoration.
  const std::string& message() const noexcept { return message_; }
  const std::optional<std::size_t>& line() const noexcept { return line_; }
  const std::optional<std::string>& record_id() const noexcept { return record_id_; }

 private:
  ErrorKind kind_;
  std::string message_;
  std::optional<std::size_t> line_;
  std::optional<std::string> record_id_;
};

}  // namespace xdet
