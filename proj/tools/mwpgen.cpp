#include "mwpgen/cli.hpp"

int main(int argc, char** argv) { return mwpgen::cli::run(argc, argv); }
