#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace sage {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Precondition violated by an argument (non-terminal trajectory, support
// mismatch, nonpositive ratio, ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

class EnumerationRefused : public Error {
 public:
  EnumerationRefused(std::uint64_t requested, std::uint64_t budget)
      : Error("enumeration refused: " + std::to_string(requested) +
              " complete trajectories exceeds the enumeration budget of " +
              std::to_string(budget)),
        requested_(requested),
        budget_(budget) {}

  std::uint64_t requested() const { return requested_; }
  std::uint64_t budget() const { return budget_; }

 private:
  std::uint64_t requested_;
  std::uint64_t budget_;
};

class ConstructionError : public Error {
 public:
  using Error::Error;
};

class SolverError : public Error {
 public:
  using Error::Error;
};

// Invalid experiment configuration; key() names the offending entry.
class ConfigError : public Error {
 public:
  ConfigError(std::string key, const std::string& what)
      : Error("config error at '" + key + "': " + what), key_(std::move(key)) {}

  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

}  // namespace sage
