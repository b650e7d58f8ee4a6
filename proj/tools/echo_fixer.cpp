// Reference external fixer: answers every request with the slice it was sent.
// Fault modes exist so the host's error handling can be exercised:
//   --truncate     send half a response, then exit
//   --bad-magic    answer with a wrong frame magic
//   --exit-after N exit with status 3 after N responses
//   --hang         read one request and never answer

#include <unistd.h>

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <string>
#include <vector>

#include "tomoforge/slice_fixer.hpp"

namespace {

bool read_exact(std::uint8_t* out, std::size_t n) {
  std::size_t done = 0;
  while (done < n) {
    const ssize_t got = ::read(STDIN_FILENO, out + done, n - done);
    if (got <= 0) return false;
    done += static_cast<std::size_t>(got);
  }
  return true;
}

void write_all(const std::uint8_t* data, std::size_t n) {
  std::size_t done = 0;
  while (done < n) {
    const ssize_t put = ::write(STDOUT_FILENO, data + done, n - done);
    if (put <= 0) _exit(4);
    done += static_cast<std::size_t>(put);
  }
}

}  // namespace

int main(int argc, char** argv) {
  bool truncate = false, bad_magic = false, hang = false;
  long exit_after = -1;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--truncate") truncate = true;
    else if (a == "--bad-magic") bad_magic = true;
    else if (a == "--hang") hang = true;
    else if (a == "--exit-after" && i + 1 < argc) exit_after = std::stol(argv[++i]);
    else {
      std::fprintf(stderr, "echo_fixer: unknown argument %s\n", argv[i]);
      return 2;
    }
  }
  long answered = 0;
  for (;;) {
    std::vector<std::uint8_t> frame(8);
    if (!read_exact(frame.data(), 8)) return 0;  // host closed the stream
    std::uint32_t len;
    std::memcpy(&len, frame.data() + 4, 4);
    frame.resize(8 + len);
    if (!read_exact(frame.data() + 8, len)) return 1;
    if (hang) {
      for (;;) ::pause();
    }
    try {
      const tomo::FixerRequest req = tomo::decode_fixer_request(frame);
      std::vector<std::uint8_t> out = tomo::encode_fixer_response({req.slice});
      if (bad_magic) std::memcpy(out.data(), "XXXX", 4);
      if (truncate) {
        write_all(out.data(), out.size() / 2);
        return 0;
      }
      write_all(out.data(), out.size());
    } catch (const std::exception& e) {
      std::fprintf(stderr, "echo_fixer: %s\n", e.what());
      return 1;
    }
    if (exit_after >= 0 && ++answered >= exit_after) return 3;
  }
}
