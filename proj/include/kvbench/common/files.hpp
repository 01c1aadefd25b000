#pragma once

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>
#include <zlib.h>

#include <atomic>
#include <cerrno>
#include <chrono>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <string>
#include <system_error>
#include <utility>

#include "kvbench/common/bytes.hpp"

namespace kvbench {

namespace fs = std::filesystem;

inline std::uint32_t crc32_of(ByteView data, std::uint32_t seed = 0) noexcept {
  return static_cast<std::uint32_t>(
      ::crc32(seed, reinterpret_cast<const Bytef*>(data.data()), static_cast<uInt>(data.size())));
}

[[noreturn]] inline void throw_errno(const std::string& what) {
  throw std::system_error(errno, std::generic_category(), what);
}

// Owning POSIX file descriptor.
class FileHandle {
 public:
  FileHandle() = default;
  FileHandle(const fs::path& path, int flags, mode_t mode = 0644) : path_(path) {
    fd_ = ::open(path.c_str(), flags | O_CLOEXEC, mode);
    if (fd_ < 0) throw_errno("open " + path.string());
  }
  ~FileHandle() { reset(); }

  FileHandle(FileHandle&& other) noexcept
      : fd_(std::exchange(other.fd_, -1)), path_(std::move(other.path_)) {}
  FileHandle& operator=(FileHandle&& other) noexcept {
    if (this != &other) {
      reset();
      fd_ = std::exchange(other.fd_, -1);
      path_ = std::move(other.path_);
    }
    return *this;
  }
  FileHandle(const FileHandle&) = delete;
  FileHandle& operator=(const FileHandle&) = delete;

  static FileHandle open_rw(const fs::path& path) { return FileHandle(path, O_RDWR | O_CREAT); }
  static FileHandle open_ro(const fs::path& path) { return FileHandle(path, O_RDONLY); }

  bool is_open() const noexcept { return fd_ >= 0; }
  int fd() const noexcept { return fd_; }
  const fs::path& path() const noexcept { return path_; }

  void reset() noexcept {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }

  void pwrite_all(ByteView data, std::uint64_t offset) const {
    const std::byte* p = data.data();
    std::size_t left = data.size();
    while (left > 0) {
      const ssize_t n = ::pwrite(fd_, p, left, static_cast<off_t>(offset));
      if (n < 0) {
        if (errno == EINTR) continue;
        throw_errno("pwrite " + path_.string());
      }
      p += n;
      left -= static_cast<std::size_t>(n);
      offset += static_cast<std::uint64_t>(n);
    }
  }

  // Returns the number of bytes read; short only at end of file.
  std::size_t pread_some(MutableByteView out, std::uint64_t offset) const {
    std::byte* p = out.data();
    std::size_t left = out.size();
    std::size_t total = 0;
    while (left > 0) {
      const ssize_t n = ::pread(fd_, p, left, static_cast<off_t>(offset));
      if (n < 0) {
        if (errno == EINTR) continue;
        throw_errno("pread " + path_.string());
      }
      if (n == 0) break;
      p += n;
      left -= static_cast<std::size_t>(n);
      offset += static_cast<std::uint64_t>(n);
      total += static_cast<std::size_t>(n);
    }
    return total;
  }

  std::uint64_t size() const {
    struct stat st {};
    if (::fstat(fd_, &st) != 0) throw_errno("fstat " + path_.string());
    return static_cast<std::uint64_t>(st.st_size);
  }

  void truncate(std::uint64_t length) const {
    if (::ftruncate(fd_, static_cast<off_t>(length)) != 0) throw_errno("ftruncate " + path_.string());
  }

  void datasync() const {
    if (::fdatasync(fd_) != 0) throw_errno("fdatasync " + path_.string());
  }

  // Start write-back of [offset, offset+len) and ask the kernel to drop those
  // page-cache pages, so resident memory tracks the store's own buffers.
  void write_back_and_drop(std::uint64_t offset, std::uint64_t len) const noexcept {
#if defined(__linux__)
    ::sync_file_range(fd_, static_cast<off64_t>(offset), static_cast<off64_t>(len),
                      SYNC_FILE_RANGE_WRITE);
#endif
#if defined(POSIX_FADV_DONTNEED)
    ::posix_fadvise(fd_, static_cast<off_t>(offset), static_cast<off_t>(len), POSIX_FADV_DONTNEED);
#endif
  }

 private:
  int fd_ = -1;
  fs::path path_;
};

// Creates a unique directory under `parent`; removes it recursively on destruction
// unless released.
class ScratchDir {
 public:
  explicit ScratchDir(const fs::path& parent, std::string_view prefix = "run") {
    static std::atomic<std::uint64_t> counter{0};
    fs::create_directories(parent);
    const auto stamp = std::chrono::steady_clock::now().time_since_epoch().count();
    for (int attempt = 0; attempt < 64; ++attempt) {
      fs::path candidate = parent / (std::string(prefix) + "-" + std::to_string(::getpid()) + "-" +
                                     std::to_string(stamp) + "-" + std::to_string(counter++));
      std::error_code ec;
      if (fs::create_directory(candidate, ec)) {
        path_ = std::move(candidate);
        return;
      }
    }
    throw std::runtime_error("cannot create scratch directory under " + parent.string());
  }
  ~ScratchDir() {
    if (!path_.empty() && !keep_) {
      std::error_code ec;
      fs::remove_all(path_, ec);
    }
  }
  ScratchDir(const ScratchDir&) = delete;
  ScratchDir& operator=(const ScratchDir&) = delete;

  const fs::path& path() const noexcept { return path_; }
  void keep() noexcept { keep_ = true; }

 private:
  fs::path path_;
  bool keep_ = false;
};

inline fs::path default_scratch_root() {
  if (const char* env = std::getenv("KVBENCH_SCRATCH"); env != nullptr && *env != '\0') return env;
  return fs::temp_directory_path() / "kvbench";
}

}  // namespace kvbench
