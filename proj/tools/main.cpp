#include "gkd/harness.hpp"

int main(int argc, char** argv) { return gkd::cli(argc, argv); }
