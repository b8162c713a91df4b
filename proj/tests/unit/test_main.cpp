#define DOCTEST_CONFIG_IMPLEMENT
#include <doctest.h>

#include "cfsynth/runtime.hpp"

int main(int argc, char** argv) {
    cfs::tune_allocator();
    doctest::Context ctx(argc, argv);
    return ctx.run();
}
