#include "gnmt/cli.hpp"

int main(int argc, char** argv) { return gnmt::run_cli(argc, argv); }
