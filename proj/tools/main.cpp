#include <iostream>

#include "trafficlm/cli.hpp"

int main(int argc, char **argv) { return trafficlm::run_cli(argc, argv, std::cout, std::cerr); }
