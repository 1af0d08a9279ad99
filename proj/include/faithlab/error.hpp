#pragma once

#include <stdexcept>
#include <string>

namespace faithlab {

/// Broad failure categories. Each maps to a distinct CLI exit code.
enum class ErrorKind {
    config = 2,      ///< invalid or unknown configuration
    data = 3,        ///< malformed inputs, shape mismatches, bad files
    divergence = 4,  ///< non-finite loss or objective
    gate = 5,        ///< backdoor quality gate failed
    io = 6,          ///< unwritable output path
};

/// Finer-grained reasons for file-format failures.
enum class FormatIssue {
    none,
    bad_magic,
    bad_version,
    truncated,
    count_mismatch,
    bad_header,
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what, FormatIssue issue = FormatIssue::none)
        : std::runtime_error(what), kind_(kind), issue_(issue) {}

    ErrorKind kind() const noexcept { return kind_; }
    FormatIssue issue() const noexcept { return issue_; }
    int exit_code() const noexcept { return static_cast<int>(kind_); }

private:
    ErrorKind kind_;
    FormatIssue issue_;
};

inline Error config_error(const std::string& what) { return Error(ErrorKind::config, what); }
inline Error data_error(const std::string& what) { return Error(ErrorKind::data, what); }
inline Error format_error(FormatIssue issue, const std::string& what) {
    return Error(ErrorKind::data, what, issue);
}

}  // namespace faithlab
