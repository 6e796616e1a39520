#include "mwp/cli.hpp"

int main(int argc, char** argv) { return mwp::run_cli(argc, argv); }
