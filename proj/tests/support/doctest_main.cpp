#define DOCTEST_CONFIG_IMPLEMENT
#include "doctest.h"
#include "polypforge/logging.hpp"

int main(int argc, char** argv) {
  polypforge::init_logging_from_env("error");
  doctest::Context context(argc, argv);
  return context.run();
}
