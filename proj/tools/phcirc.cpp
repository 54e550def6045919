#include "phcirc_cli.hpp"

int main(int argc, char** argv) { return phcirc::cli::run(argc, argv); }
