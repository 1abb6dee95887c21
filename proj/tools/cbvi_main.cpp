#include <string>
#include <vector>

#include "cbvi/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return cbvi::cli::run(args);
}
