#include "tlm/cli.hpp"

int main(int argc, char** argv) { return tlm::cli_main(argc, argv); }
