#include "fsner/cli.hpp"

int main(int argc, char** argv) { return fsner::run_cli(argc, argv); }
