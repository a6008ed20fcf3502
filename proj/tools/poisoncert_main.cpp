#include <iostream>

#include "poisoncert/cli.hpp"

int main(int argc, char** argv) { return poisoncert::cli::run(argc, argv, std::cout, std::cerr); }
