#include "starnet/cli.hpp"

int main(int argc, char** argv) { return starnet::run_cli(argc, argv); }
