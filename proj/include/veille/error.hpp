#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>

namespace veille {

/// Root of every exception thrown by the library.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Input data is malformed or breaks a documented invariant. CLI exit status 1.
class ValidationError : public Error {
public:
  using Error::Error;
};

class EncodingError : public ValidationError {
public:
  using ValidationError::ValidationError;
};

class CorpusError : public ValidationError {
public:
  CorpusError(std::string document_id, const std::string& what)
      : ValidationError(what), document_id_(std::move(document_id)) {}
  const std::string& document_id() const noexcept { return document_id_; }

private:
  std::string document_id_;
};

/// Unbalanced or crossing inline tags. `position` counts code points in the annotated input.
class MarkupError : public ValidationError {
public:
  MarkupError(std::size_t position, const std::string& what)
      : ValidationError(what + " at offset " + std::to_string(position)), position_(position) {}
  std::size_t position() const noexcept { return position_; }

private:
  std::size_t position_;
};

class GroupingError : public ValidationError {
public:
  GroupingError(std::string ent_id, const std::string& what)
      : ValidationError(what), ent_id_(std::move(ent_id)) {}
  const std::string& ent_id() const noexcept { return ent_id_; }

private:
  std::string ent_id_;
};

class EventParseError : public ValidationError {
public:
  using ValidationError::ValidationError;
};

class RenderError : public ValidationError {
public:
  using ValidationError::ValidationError;
};

/// Bad configuration, missing files, template problems. CLI exit status 2.
class ConfigError : public Error {
public:
  using Error::Error;
};

class TemplateError : public ConfigError {
public:
  using ConfigError::ConfigError;
};

class TransportError : public Error {
public:
  TransportError(const std::string& what, bool transient)
      : Error(what), transient_(transient) {}
  bool transient() const noexcept { return transient_; }

private:
  bool transient_;
};

class ProviderError : public TransportError {
public:
  explicit ProviderError(const std::string& what) : TransportError(what, false) {}
};

class ReplayMissError : public TransportError {
public:
  explicit ReplayMissError(std::string digest)
      : TransportError("no replay fixture for request digest " + digest, false),
        digest_(std::move(digest)) {}
  const std::string& digest() const noexcept { return digest_; }

private:
  std::string digest_;
};

}  // namespace veille
