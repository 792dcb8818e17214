#include "kvn/cli.hpp"

int main(int argc, char** argv) { return kvn::cli::run(argc, argv); }
