#include "abstrakt/cli.hpp"

#include <iostream>

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    auto result = abstrakt::cli::run(args);
    std::cout << result.document.dump(2) << "\n";
    return result.exit_code;
}
