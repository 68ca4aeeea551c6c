#include "hypctl/cli.hpp"

int main(int argc, char** argv) { return hypctl::cli::run(argc, argv); }
