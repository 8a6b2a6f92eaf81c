#include "cli.h"

int main(int argc, char** argv) { return lcp::cli::run(argc, argv); }
