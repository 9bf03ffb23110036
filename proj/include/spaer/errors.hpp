#pragma once

#include <stdexcept>
#include <string>

namespace spaer {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class GridMismatch : public Error {
public:
    using Error::Error;
};

class LengthMismatch : public Error {
public:
    using Error::Error;
};

class ShapeMismatch : public Error {
public:
    using Error::Error;
};

class NonFiniteInput : public Error {
public:
    using Error::Error;
};

class InvalidChannelSpec : public Error {
public:
    using Error::Error;
};

class NonFiniteGradient : public Error {
public:
    using Error::Error;
};

class NonFiniteEnergy : public Error {
public:
    using Error::Error;
};

class DivergenceDetected : public Error {
public:
    using Error::Error;
};

class EmptyDataset : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

/// A CSV or JSON file whose header or columns do not match the expected schema.
class SchemaError : public Error {
public:
    using Error::Error;
};

/// Too few usable point pairs, or a rotation that the points cannot observe.
/// `frame` is the index of the source frame when raised from the tracker, -1 otherwise.
class DegenerateGeometry : public Error {
public:
    explicit DegenerateGeometry(const std::string& what, int frame = -1)
        : Error(what), frame_(frame) {}

    [[nodiscard]] int frame() const noexcept { return frame_; }

private:
    int frame_;
};

} // namespace spaer
