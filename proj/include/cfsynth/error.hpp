#pragma once

#include <stdexcept>
#include <string>

namespace cfs {

// Violated precondition on caller-supplied data. The CLI maps this to exit code 1.
class InvalidInput : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// A pipeline stage failed; the message is prefixed with the stage name.
class StageError : public std::runtime_error {
public:
    StageError(std::string stage, const std::string& what, bool validation)
        : std::runtime_error(stage + ": " + what), stage_(std::move(stage)), validation_(validation) {}

    const std::string& stage() const { return stage_; }
    bool is_validation() const { return validation_; }

private:
    std::string stage_;
    bool validation_;
};

[[noreturn]] inline void reject(const std::string& what) { throw InvalidInput(what); }

inline void require(bool cond, const std::string& what) {
    if (!cond) reject(what);
}

}  // namespace cfs
