/*
 * Copyright 2026 The FusionProxy Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#ifndef FUSIONPROXY_ERROR_HPP_
#define FUSIONPROXY_ERROR_HPP_

#include <stdexcept>
#include <string>

namespace fusionproxy {

// Base of every error raised by the library. The CLI maps any of these to a
// nonzero exit status.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Raised when a file or manifest carries a format tag other than the one the
// reader understands.
class FormatVersionError : public Error {
 public:
  FormatVersionError(const std::string& found, const std::string& expected)
      : Error("format version mismatch: found \"" + found + "\", expected \"" +
              expected + "\""),
        found_(found),
        expected_(expected) {}
  const std::string& found() const { return found_; }
  const std::string& expected() const { return expected_; }

 private:
  std::string found_;
  std::string expected_;
};

class CacheError : public Error {
 public:
  using Error::Error;
};

class EntryNotFoundError : public CacheError {
 public:
  explicit EntryNotFoundError(const std::string& id)
      : CacheError("entry not found: " + id) {}
};

class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace fusionproxy

#endif  // FUSIONPROXY_ERROR_HPP_
