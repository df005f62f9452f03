#include "fnode/cli.hpp"

int main(int argc, char** argv) { return fnode::cli::run(argc, argv); }
