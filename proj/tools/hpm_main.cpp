#include "hpm/cli.hpp"

int main(int argc, char** argv) { return hpm::run_cli(argc, argv); }
