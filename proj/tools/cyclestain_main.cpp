#include "cyclestain/cli/cli.hpp"

int main(int argc, char** argv) { return cyclestain::dispatch(argc, argv); }
