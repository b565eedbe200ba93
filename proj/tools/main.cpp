#include "cli_commands.hpp"

int main(int argc, char** argv) { return convmcd::cli::run(argc, argv); }
