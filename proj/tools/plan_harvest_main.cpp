#include "plan_harvest/cli.hpp"

#include <iostream>
#include <string>
#include <vector>

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    plan_harvest::cli::Environment env{std::cout, std::cerr};
    return plan_harvest::cli::run(args, env);
}
