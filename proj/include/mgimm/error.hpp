#pragma once

#include <stdexcept>
#include <string>

namespace mgimm {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Tensor or layer dimensions do not line up.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// Input data or configuration violates a documented invariant.
class ValidationError : public Error {
public:
    using Error::Error;
};

/// Loss or gradient became non-finite during training.
class NumericsError : public Error {
public:
    using Error::Error;
};

/// File could not be opened, parsed or written.
class IoError : public Error {
public:
    using Error::Error;
};

}  // namespace mgimm
