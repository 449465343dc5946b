#include "maekit/cli.hpp"

int main(int argc, char** argv) { return maekit::run_cli(argc, argv); }
