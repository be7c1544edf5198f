#include <iostream>

#include "paracolor/cli.hpp"

int main(int argc, char** argv) {
    return paracolor::cli::run(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}
