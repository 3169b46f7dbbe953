#pragma once

#include <stdexcept>
#include <string>

namespace cellvit {

// Base class for all library errors. Subclasses carry the failure category
// in the type so callers can catch narrowly; the message carries specifics.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct ShapeMismatch : Error {
    explicit ShapeMismatch(const std::string& msg) : Error(msg) {}
};

struct NonDivisibleInput : Error {
    explicit NonDivisibleInput(const std::string& msg) : Error(msg) {}
};

struct DepthNotDivisibleBy4 : Error {
    explicit DepthNotDivisibleBy4(const std::string& msg) : Error(msg) {}
};

struct DomainError : Error {
    explicit DomainError(const std::string& msg) : Error(msg) {}
};

struct BadMagic : Error {
    explicit BadMagic(const std::string& msg) : Error(msg) {}
};

struct VersionUnsupported : Error {
    explicit VersionUnsupported(const std::string& msg) : Error(msg) {}
};

struct ChecksumMismatch : Error {
    explicit ChecksumMismatch(const std::string& msg) : Error(msg) {}
};

struct IndexOutOfRange : Error {
    explicit IndexOutOfRange(const std::string& msg) : Error(msg) {}
};

struct DegenerateMax : Error {
    explicit DegenerateMax(const std::string& msg) : Error(msg) {}
};

struct BadRayCount : Error {
    explicit BadRayCount(const std::string& msg) : Error(msg) {}
};

struct OverlapTooLarge : Error {
    explicit OverlapTooLarge(const std::string& msg) : Error(msg) {}
};

struct GridMismatch : Error {
    explicit GridMismatch(const std::string& msg) : Error(msg) {}
};

struct IoError : Error {
    explicit IoError(const std::string& msg) : Error(msg) {}
};

} // namespace cellvit
