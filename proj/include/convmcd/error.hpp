#pragma once

#include <stdexcept>
#include <string>

namespace convmcd {

// Base class for every failure raised by the library.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class ShapeMismatch : public Error {
public:
  using Error::Error;
};

class EmptyContour : public Error {
public:
  EmptyContour() : Error("contour has no foreground pixels") {}
  using Error::Error;
};

class EmptyBoundary : public Error {
public:
  using Error::Error;
};

class NonFinite : public Error {
public:
  using Error::Error;
};

class UnnormalizedTarget : public Error {
public:
  UnnormalizedTarget() : Error("distance target must be normalized before computing the loss") {}
};

class VariantMismatch : public Error {
public:
  using Error::Error;
};

class OddDimension : public Error {
public:
  using Error::Error;
};

class DivergenceDetected : public Error {
public:
  using Error::Error;
};

class FormatError : public Error {
public:
  using Error::Error;
};

class InvalidArgument : public Error {
public:
  using Error::Error;
};

inline void require_same_shape(int w1, int h1, int w2, int h2, const char* what) {
  if (w1 != w2 || h1 != h2) {
    throw ShapeMismatch(std::string(what) + ": " + std::to_string(w1) + "x" + std::to_string(h1) +
                        " vs " + std::to_string(w2) + "x" + std::to_string(h2));
  }
}

}  // namespace convmcd
