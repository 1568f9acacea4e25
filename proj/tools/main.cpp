#include "transferi2i/commands.hpp"

int main(int argc, char** argv) { return transferi2i::cli::run(argc, argv); }
