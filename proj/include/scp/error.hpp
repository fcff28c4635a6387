#pragma once

#include <stdexcept>
#include <string>

namespace scp {

// Error taxonomy shared with the CLI exit codes: config_error -> 2,
// format_error -> 3, numeric_error -> 4.

class config_error : public std::runtime_error {
public:
    explicit config_error(const std::string& msg) : std::runtime_error(msg) {}
};

class format_error : public std::runtime_error {
public:
    enum class code {
        bad_magic,
        bad_version,
        bad_header,
        dimension_mismatch,
        truncated,
        non_binary_label,
        missing_column,
        bad_cell,
    };

    format_error(code c, const std::string& msg) : std::runtime_error(msg), code_(c) {}

    code which() const noexcept { return code_; }

private:
    code code_;
};

class numeric_error : public std::runtime_error {
public:
    explicit numeric_error(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace scp
