#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ucvm {

enum class ErrorKind {
  // repo_core
  NotFound,
  IntegrityError,
  DecodeError,
  InvariantError,
  StoreError,
  // publisher
  DuplicateSnapshotName,
  UnknownSelector,
  InvalidPackage,
  // transport
  Unreachable,
  QuotaTooSmall,
  PinExceedsQuota,
  // unionfs
  ParentNotFound,
  ParentNotADirectory,
  IsADirectory,
  NotADirectory,
  NotARegularFile,
  AlreadyExists,
  NotEmpty,
  ReservedName,
  InvalidPath,
  ReadOnly,
  Closed,
  Locked,
  // bootstrap
  MissingRequiredKey,
  MalformedBlock,
  NoScratchAvailable,
  NotBooted,
  // updater
  StageConflict,
  NotPinned,
  // generic
  InvalidArgument,
  IoError,
};

std::string_view to_string(ErrorKind kind);

/// Every failure in the library surfaces as this exception; callers branch on
/// kind(), the message is for humans.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message),
        kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace ucvm
