#pragma once

#include <stdexcept>
#include <string>

namespace hmmlab {

// Base for every recoverable error raised by the library. Precondition
// violations use std::invalid_argument instead.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NonErgodic : public Error {
 public:
  using Error::Error;
};

class SymbolOutOfRange : public Error {
 public:
  SymbolOutOfRange(int symbol, int alphabet_size)
      : Error("symbol " + std::to_string(symbol) + " outside alphabet of size " +
              std::to_string(alphabet_size)),
        symbol_(symbol) {}
  int symbol() const { return symbol_; }

 private:
  int symbol_;
};

class EntropyUnreachable : public Error {
 public:
  using Error::Error;
};

class AlphabetTooLarge : public Error {
 public:
  using Error::Error;
};

class LengthMismatch : public Error {
 public:
  using Error::Error;
};

class NotNormalized : public Error {
 public:
  using Error::Error;
};

class GridMismatch : public Error {
 public:
  using Error::Error;
};

class GridExceedsLength : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class UnknownColumn : public Error {
 public:
  using Error::Error;
};

class AlphabetOverflow : public Error {
 public:
  using Error::Error;
};

class MissingArtifacts : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

}  // namespace hmmlab
