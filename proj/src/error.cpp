#include "xdet/error.hpp"

namespace xdet {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::io: return "io-error";
    case ErrorKind::schema: return "schema-error";
    case ErrorKind::invariant: return "invariant-error";
    case ErrorKind::empty_dataset: return "empty-dataset";
    case ErrorKind::template_mismatch: return "template-mismatch";
    case ErrorKind::group_too_small: return "group-too-small";
    case ErrorKind::non_finite_gradient: return "non-finite-gradient";
    case ErrorKind::missing_prediction: return "missing-prediction";
    case ErrorKind::duplicate_prediction: return "duplicate-prediction";
    case ErrorKind::unknown_record: return "unknown-record";
    case ErrorKind::invalid_crop: return "invalid-crop";
    case ErrorKind::too_small: return "too-small";
    case ErrorKind::no_fake_records: return "no-fake-records";
    case ErrorKind::empty_reference: return "empty-reference";
    case ErrorKind::id_mismatch: return "id-mismatch";
    case ErrorKind::invalid_argument: return "invalid-argument";
  }
  return "error";
}

namespace {

std::string decorate(ErrorKind kind, const std::string& message,
                     const std::optional<std::size_t>& line,
                     const std::optional<std::string>& record_id) {
  std::string out = to_string(kind);
  if (line) out += " (line " + std::to_string(*line) + ")";
  if (record_id) out += " (record '" + *record_id + "')";
  out += ": ";
  out += message;
  return out;
}

}  // namespace

Error::Error(ErrorKind kind, const std::string& message,
             std::optional<std::size_t> line,
             std::optional<std::string> record_id)
    : std::runtime_error(decorate(kind, message, line, record_id)),
      kind_(kind),
      message_(message),
      line_(line),
      record_id_(std::move(record_id)) {}

}  // namespace xdet
