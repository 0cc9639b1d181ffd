#pragma once

#include <stdexcept>
#include <string>

namespace ncdlab {

// Error taxonomy shared by all modules. Every failure mode maps onto one of
// these so callers (and the CLI exit-code contract) can distinguish usage
// errors from numeric ones.

struct shape_error : std::runtime_error {
    explicit shape_error(const std::string& msg) : std::runtime_error(msg) {}
};

struct numeric_error : std::runtime_error {
    explicit numeric_error(const std::string& msg) : std::runtime_error(msg) {}
};

struct config_error : std::runtime_error {
    explicit config_error(const std::string& msg) : std::runtime_error(msg) {}
};

struct argument_error : std::runtime_error {
    explicit argument_error(const std::string& msg) : std::runtime_error(msg) {}
};

struct insufficient_data_error : std::runtime_error {
    explicit insufficient_data_error(const std::string& msg) : std::runtime_error(msg) {}
};

struct io_error : std::runtime_error {
    explicit io_error(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace ncdlab
