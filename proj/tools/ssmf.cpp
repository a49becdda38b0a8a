#include "ssmf/cli.hpp"

int main(int argc, char** argv) { return ssmf::run_cli(argc, argv); }
