#include <iostream>

#include "ermlab/cli.hpp"

int main(int argc, char** argv) { return ermlab::dispatch(argc, argv, std::cout, std::cerr); }
