#include "bifctl/cli.hpp"

int main(int argc, char** argv) { return bifctl::run(argc, argv); }
