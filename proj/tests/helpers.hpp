#pragma once

#include <doctest.h>

#include "compress/error.hpp"

namespace test {

/// Code of the compress::Error thrown by fn; fails the test when nothing is thrown.
template <typename Fn>
compress::Errc code_of(Fn&& fn) {
  try {
    fn();
  } catch (const compress::Error& e) {
    return e.code();
  }
  FAIL("expected a compress::Error");
  return compress::Errc::Io;
}

}  // namespace test
