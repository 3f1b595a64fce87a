#include "e2r/cli.hpp"

int main(int argc, char** argv) { return e2r::cli_main(argc, argv); }
