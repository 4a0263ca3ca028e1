#include "irdfusion/cli.hpp"

int main(int argc, char** argv) { return irdfusion::cli_dispatch(argc, argv); }
