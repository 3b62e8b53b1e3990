#include "flowpipe/cli.hpp"

int main(int argc, char** argv) { return flowpipe::cli::main(argc, argv); }
