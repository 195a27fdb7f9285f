#include "cli.hpp"

int main(int argc, char** argv) { return mtriage::cli::run(argc, argv); }
