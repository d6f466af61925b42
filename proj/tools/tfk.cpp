#include "tfk/cli.hpp"

int main(int argc, char** argv) { return tfk::run_cli(argc, argv); }
