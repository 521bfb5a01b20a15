#include <string>
#include <vector>

#include "medart/app.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv, argv + argc);
    return medart::app::run_cli(args);
}
