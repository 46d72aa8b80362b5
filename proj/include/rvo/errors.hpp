#pragma once

#include <stdexcept>
#include <string>

namespace rvo {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define RVO_DEFINE_ERROR(Name)          \
  class Name : public Error {           \
   public:                              \
    using Error::Error;                 \
  }

RVO_DEFINE_ERROR(NonOrthonormalInput);
RVO_DEFINE_ERROR(CountOutOfRange);
RVO_DEFINE_ERROR(KTooLarge);
RVO_DEFINE_ERROR(IndexOutOfRange);
RVO_DEFINE_ERROR(ShapeMismatch);
RVO_DEFINE_ERROR(ShapeError);
RVO_DEFINE_ERROR(BadSampleCount);
RVO_DEFINE_ERROR(EmptyCloud);
RVO_DEFINE_ERROR(DataFormatError);
RVO_DEFINE_ERROR(NonFiniteLoss);
RVO_DEFINE_ERROR(MissingCalibration);
RVO_DEFINE_ERROR(CorruptPointFile);
RVO_DEFINE_ERROR(ConfigError);
RVO_DEFINE_ERROR(LengthMismatch);
RVO_DEFINE_ERROR(CheckpointError);

#undef RVO_DEFINE_ERROR

/// Text-format failure carrying the 1-based line number it occurred on.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, int line)
      : Error(what + " (line " + std::to_string(line) + ")"), line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

}  // namespace rvo
