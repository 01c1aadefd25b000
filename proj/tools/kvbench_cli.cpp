#include "kvbench/cli.hpp"

int main(int argc, char** argv) { return kvbench::cli::run(argc, argv); }
