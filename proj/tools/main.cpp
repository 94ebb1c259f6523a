#include "lvd/cli.hpp"

int main(int argc, char** argv) { return lvd::cli_main(argc, argv); }
