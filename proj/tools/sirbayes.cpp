#include "sirbayes/cli.hpp"

int main(int argc, char** argv) { return sirbayes::cli::run(argc, argv); }
