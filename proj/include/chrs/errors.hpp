#ifndef CHRS_ERRORS_HPP
#define CHRS_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace chrs {

// Bad arguments, violated preconditions, malformed data.
struct input_error : std::runtime_error {
    explicit input_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Filesystem / decode / encode failures.
struct io_error : std::runtime_error {
    explicit io_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid model/training/CLI configuration.
struct config_error : std::runtime_error {
    explicit config_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Displacement-field inversion did not converge.
struct inversion_error : std::runtime_error {
    explicit inversion_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Training aborted (too many skipped steps, unreadable data mid-run).
struct training_error : std::runtime_error {
    explicit training_error(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace chrs

#endif
