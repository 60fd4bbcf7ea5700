#include "bem/cli.hpp"

int main(int argc, char** argv) { return bem::run_cli(argc, argv); }
