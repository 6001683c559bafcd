#include "opusim/cli.hpp"

int main(int argc, char** argv) { return opusim::cli_main(argc, argv); }
