#include "a2kt/commands.hpp"

int main(int argc, char** argv) { return a2kt::run_cli(argc, argv); }
