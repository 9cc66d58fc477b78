#include "migratekit/errors.hpp"

#include <utility>

namespace migratekit {

SchemaError::SchemaError(std::string path, const std::string& message)
    : Error(path.empty() ? message : path + ": " + message), path_(std::move(path)) {}

FormatError::FormatError(std::string line)
    : Error("line does not match a step template: \"" + line + "\""), line_(std::move(line)) {}

}  // namespace migratekit
