#include "bayesmg/cli.hpp"

int main(int argc, char** argv) { return bayesmg::cli_dispatch(argc, argv); }
