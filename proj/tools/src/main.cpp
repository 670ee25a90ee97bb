#include "cli.hpp"

int main(int argc, char** argv) { return nrba::cli::run(argc, argv); }
