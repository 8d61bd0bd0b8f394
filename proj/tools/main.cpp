#include "cod/cli.hpp"

int main(int argc, char** argv) { return cod::run_cli(argc, argv); }
