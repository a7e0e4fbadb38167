#include "dsformer/cli.hpp"

int main(int argc, char** argv) { return dsformer::run_cli(argc, argv); }
