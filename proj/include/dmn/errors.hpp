#pragma once

#include <stdexcept>
#include <string>

namespace dmn {

struct dimension_error : std::runtime_error {
    explicit dimension_error(const std::string& what) : std::runtime_error(what) {}
};

struct numeric_error : std::runtime_error {
    explicit numeric_error(const std::string& what) : std::runtime_error(what) {}
};

struct io_error : std::runtime_error {
    explicit io_error(const std::string& what) : std::runtime_error(what) {}
};

struct train_error : std::runtime_error {
    explicit train_error(const std::string& what) : std::runtime_error(what) {}
};

struct config_error : std::runtime_error {
    explicit config_error(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace dmn
