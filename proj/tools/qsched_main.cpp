#include "iconq/cli.hpp"

int main(int argc, char** argv) { return iconq::run_cli(argc, argv); }
