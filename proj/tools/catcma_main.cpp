#include "catcma/harness.hpp"

int main(int argc, char** argv) { return catcma::harness::cli_main(argc, argv); }
