#include <iostream>
#include <string>
#include <vector>

#include "mflb/harness.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return mflb::harness::cli(args, std::cout, std::cerr);
}
