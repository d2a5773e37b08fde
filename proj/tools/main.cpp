#include "regmatch/cli.hpp"

int main(int argc, char** argv) { return regmatch::run_cli(argc, argv); }
