#include "hlvae/cli.hpp"

int main(int argc, char** argv) { return hlvae::run_cli(argc, argv); }
