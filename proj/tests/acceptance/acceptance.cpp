// Full-size acceptance run: one PASS/FAIL line per criterion, non-zero exit on any failure.

#include <cstdio>

#include "dvdet/suite.hpp"

int main() {
  dvdet::SuiteConfig cfg;
  std::size_t index = 0;
  std::size_t failed = 0;
  dvdet::run_suite(cfg, [&](const dvdet::Check& c) {
    ++index;
    if (!c.passed) ++failed;
    std::printf("[%2zu] %s %-36s %8.2fs  %s\n", index, c.passed ? "PASS" : "FAIL", c.name.c_str(),
                c.seconds, c.detail.c_str());
    std::fflush(stdout);
  });
  std::printf("%zu of %zu criteria passed\n", index - failed, index);
  return failed == 0 ? 0 : 1;
}
