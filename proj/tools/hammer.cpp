#include "hammer/cli.hpp"

int main(int argc, char** argv) { return hammer::run_cli(argc, argv); }
