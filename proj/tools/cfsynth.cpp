#include "cfsynth/cli.hpp"
#include "cfsynth/runtime.hpp"

#include <iostream>

int main(int argc, char** argv) {
    cfs::tune_allocator();
    return cfs::cli::run({argv + 1, argv + argc}, std::cout, std::cerr);
}
