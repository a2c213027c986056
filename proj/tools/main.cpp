#include "deepgp/commands.hpp"

int main(int argc, char** argv) { return deepgp::run_cli(argc, argv); }
