#include "confmask/cli.hpp"

int main(int argc, char** argv) { return confmask::cli::run(argc, argv); }
