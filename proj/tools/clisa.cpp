#include "clisa/cli/commands.hpp"

int main(int argc, char** argv) { return clisa::cli::run(argc, argv); }
