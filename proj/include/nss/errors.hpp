#pragma once

#include <stdexcept>
#include <string>

namespace nss {

// Bad user input: malformed config, broken invariants, inconsistent shapes.
class validation_error : public std::invalid_argument {
 public:
  explicit validation_error(const std::string& what) : std::invalid_argument(what) {}
};

// A task-loss oracle failed to produce a value.
class oracle_error : public std::runtime_error {
 public:
  explicit oracle_error(const std::string& what) : std::runtime_error(what) {}
};

// Tabular oracle has no row for the requested configuration.
class table_miss_error : public oracle_error {
 public:
  explicit table_miss_error(const std::string& what) : oracle_error(what) {}
};

// External oracle process died, timed out, or spoke garbage.
class transport_error : public oracle_error {
 public:
  explicit transport_error(const std::string& what) : oracle_error(what) {}
};

// Divergence during supernet training (non-finite loss).
class divergence_error : public std::runtime_error {
 public:
  explicit divergence_error(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace nss
