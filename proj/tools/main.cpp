#include "cli.hpp"

int main(int argc, char** argv) { return musicnet::cli::run(argc, argv); }
