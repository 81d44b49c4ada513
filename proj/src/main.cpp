#include "raise/cli.hpp"

int main(int argc, char** argv) { return ranking::run_cli(argc, argv); }
