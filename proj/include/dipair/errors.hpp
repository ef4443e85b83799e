#pragma once
#include <stdexcept>
#include <string>

namespace dipair {

struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& m) : std::runtime_error("shape error: " + m) {}
};

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& m) : std::runtime_error("config error: " + m) {}
};

struct ContractError : std::runtime_error {
    explicit ContractError(const std::string& m) : std::runtime_error("contract error: " + m) {}
};

struct VocabError : std::runtime_error {
    explicit VocabError(const std::string& m) : std::runtime_error("vocabulary error: " + m) {}
};

struct LookupError : std::runtime_error {
    explicit LookupError(const std::string& m) : std::runtime_error("lookup error: " + m) {}
};

struct FormatError : std::runtime_error {
    explicit FormatError(const std::string& m) : std::runtime_error("format error: " + m) {}
};

struct MetricError : std::runtime_error {
    explicit MetricError(const std::string& m) : std::runtime_error("metric error: " + m) {}
};

}  // namespace dipair
