#pragma once

#include <stdexcept>
#include <string>

namespace cpicf {

// Precondition violations on public operations.
class InvalidArgument : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Malformed input files: CSV rows, schema documents, model JSON.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Experiment configuration rejected (unknown key, bad value, path collision).
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// A metric that is not defined for the given labels (e.g. AUC with one class).
class UndefinedMetric : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

} // namespace cpicf
