#pragma once

#include <stdexcept>
#include <string>

namespace segunet {

// Base class for all errors thrown by this library.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid configuration value; message names the offending field.
class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& msg) : Error(msg) {}
};

// Tensor shape / size contract violation, raised before any computation.
class ShapeError : public Error {
public:
    explicit ShapeError(const std::string& msg) : Error(msg) {}
};

// Dataset / file ingestion problems (orphan stems, unreadable files, ...).
class DataError : public Error {
public:
    explicit DataError(const std::string& msg) : Error(msg) {}
};

// Value-domain violations (non-binary masks, out-of-range probabilities).
class ValidationError : public Error {
public:
    explicit ValidationError(const std::string& msg) : Error(msg) {}
};

// Checkpoint load/save problems, discriminated by kind.
class CheckpointError : public Error {
public:
    enum class Kind { Corrupt, SchemaMismatch, MissingKeys, ExtraKeys, Io };

    CheckpointError(Kind kind, const std::string& msg) : Error(msg), kind_(kind) {}
    Kind kind() const { return kind_; }

private:
    Kind kind_;
};

// Training aborted (non-finite loss); carries the diagnostic context.
class TrainingAbort : public Error {
public:
    TrainingAbort(int64_t step, double lr, double loss, const std::string& msg)
        : Error(msg), step_(step), lr_(lr), loss_(loss) {}
    int64_t step() const { return step_; }
    double lr() const { return lr_; }
    double loss() const { return loss_; }

private:
    int64_t step_;
    double lr_;
    double loss_;
};

}  // namespace segunet
