#include "esap/cli.hpp"

int main(int argc, char** argv) { return esap::cli::run_cli(argc, argv); }
