#include "agroforge/json_io.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <fstream>
#include <sstream>

#include "agroforge/error.hpp"

namespace agroforge::io {

namespace fs = std::filesystem;

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("IoError", "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json read_json(const fs::path& path) {
  std::string raw = read_text(path);
  try {
    return json::parse(raw);
  } catch (const json::parse_error& e) {
    fail("ParseError", path.string() + ": " + e.what());
  }
}

std::vector<json> read_jsonl(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("IoError", "cannot open " + path.string());
  std::vector<json> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      rows.push_back(json::parse(line));
    } catch (const json::parse_error& e) {
      fail("ParseError", path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return rows;
}

void write_text(const fs::path& path, const std::string& contents) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail("IoError", "cannot write " + tmp.string());
    out << contents;
    if (!out) fail("IoError", "short write to " + tmp.string());
  }
  fs::rename(tmp, path);
}

void write_lines(const fs::path& path, const std::vector<std::string>& lines) {
  std::string contents;
  for (const auto& line : lines) {
    contents += line;
    contents += '\n';
  }
  write_text(path, contents);
}

void append_line_durable(const fs::path& path, const std::string& line) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  int fd = ::open(path.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
  if (fd < 0) fail("IoError", "cannot open " + path.string() + ": " + std::strerror(errno));
  std::string buf = line + "\n";
  const char* p = buf.data();
  std::size_t left = buf.size();
  while (left > 0) {
    ssize_t n = ::write(fd, p, left);
    if (n < 0) {
      if (errno == EINTR) continue;
      int err = errno;
      ::close(fd);
      fail("IoError", "write failed on " + path.string() + ": " + std::strerror(err));
    }
    p += n;
    left -= static_cast<std::size_t>(n);
  }
  if (::fsync(fd) != 0) {
    int err = errno;
    ::close(fd);
    fail("IoError", "fsync failed on " + path.string() + ": " + std::strerror(err));
  }
  ::close(fd);
}

}  // namespace agroforge::io
