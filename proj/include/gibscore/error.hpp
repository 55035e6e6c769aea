#pragma once

#include <stdexcept>
#include <string>

namespace gibscore {

//! Base class of every error thrown by the library.
class Error : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

//! Wrong magic bytes, unknown version or unparseable text record.
class FormatError : public Error
{
public:
  using Error::Error;
};

//! Payload shorter (or longer) than its header announces.
class CorruptionError : public Error
{
public:
  using Error::Error;
};

//! A value violates a documented invariant (NaN feature, token out of range,
//! duplicate manifest id, ...).
class ValidationError : public Error
{
public:
  using Error::Error;
};

class InsufficientDataError : public Error
{
public:
  using Error::Error;
};

class DimensionError : public Error
{
public:
  using Error::Error;
};

//! A quantity has no defined value for the given input (empty average, zero
//! variance correlation, ...).
class UndefinedError : public Error
{
public:
  using Error::Error;
};

class TrainingDivergedError : public Error
{
public:
  using Error::Error;
};

//! Bad command line or configuration. Maps to exit status 1.
class UsageError : public Error
{
public:
  using Error::Error;
};

//! A pipeline stage needs an artifact that an earlier stage has not produced.
class DependencyError : public Error
{
public:
  using Error::Error;
};

} // namespace gibscore
