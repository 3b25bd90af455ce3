#include "csteer/cli.hpp"

int main(int argc, char** argv) { return csteer::run_cli(argc, argv); }
