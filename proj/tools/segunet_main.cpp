#include "segunet/cli.hpp"

int main(int argc, char** argv) { return segunet::cli::run(argc, argv); }
