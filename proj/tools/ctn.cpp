#include "ctn/cli/cli.hpp"

int main(int argc, char** argv) { return ctn::cli::main(argc, argv); }
