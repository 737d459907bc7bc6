#include "turner/cli.hpp"

int main(int argc, char** argv) { return turner::cli::run(argc, argv); }
