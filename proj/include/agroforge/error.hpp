#pragma once

#include <stdexcept>
#include <string>

namespace agroforge {

// Every failure surfaced by the toolkit carries a stable error name
// (e.g. "EmptyDataset", "KnowledgeMissing") alongside the human message.
// The CLI prints the name so scripts can match on it.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& message);

  const std::string& code() const noexcept { return code_; }
  // what() without the "<code>: " prefix.
  const std::string& message() const noexcept { return message_; }

 private:
  std::string code_;
  std::string message_;
};

[[noreturn]] void fail(std::string code, const std::string& message);

}  // namespace agroforge
