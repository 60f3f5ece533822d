#pragma once

#include <stdexcept>
#include <string>

namespace unimotion {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct InvalidInput : Error {
  using Error::Error;
};
struct InvalidConfig : Error {
  using Error::Error;
};
struct EmptySignal : Error {
  using Error::Error;
};
struct EmptyMask : Error {
  using Error::Error;
};
struct DegenerateBatch : Error {
  using Error::Error;
};
struct ProviderUnavailable : Error {
  using Error::Error;
};
struct IncompatibleCheckpoint : Error {
  using Error::Error;
};
struct ParseError : Error {
  using Error::Error;
};
struct UnitError : Error {
  using Error::Error;
};
struct StratificationError : Error {
  using Error::Error;
};

}  // namespace unimotion
