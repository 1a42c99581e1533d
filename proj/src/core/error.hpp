#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace tlh {

enum class ErrorKind {
  kShape,
  kValidation,
  kParse,
  kIo,
  kConfig,
  kData,
  kDiverged,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& what) : Error(ErrorKind::kShape, what) {}
};

class ValidationError : public Error {
 public:
  explicit ValidationError(const std::string& what) : Error(ErrorKind::kValidation, what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(ErrorKind::kIo, what) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(ErrorKind::kConfig, what) {}
};

class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error(ErrorKind::kData, what) {}
};

enum class ParseFailure {
  kBadMagic,
  kBadVersion,
  kTruncated,
  kDimOverflow,
  kBadFlag,
  kBadShape,
  kBadName,
  kTrailingBytes,
};

const char* to_string(ParseFailure f) noexcept;

// Malformed container. offset is the byte position where decoding failed.
class ParseError : public Error {
 public:
  ParseError(ParseFailure failure, std::uint64_t offset, const std::string& detail);
  ParseFailure failure() const noexcept { return failure_; }
  std::uint64_t offset() const noexcept { return offset_; }

 private:
  ParseFailure failure_;
  std::uint64_t offset_;
};

class DivergedError : public Error {
 public:
  DivergedError(std::size_t epoch, const std::string& detail)
      : Error(ErrorKind::kDiverged,
              "training diverged at epoch " + std::to_string(epoch) + ": " + detail),
        epoch_(epoch) {}
  std::size_t epoch() const noexcept { return epoch_; }

 private:
  std::size_t epoch_;
};

}  // namespace tlh
