#include "cife/cli.hpp"

int main(int argc, char** argv) { return cife::cli::run_cli(argc, argv); }
