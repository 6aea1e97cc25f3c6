#include "hmmic/cli.hpp"

int main(int argc, char** argv) { return hmmic::run_cli(argc, argv); }
