#include <snse/cli.hpp>

int main(int argc, char** argv) { return snse::run_cli(argc, argv); }
