#include "spaer/cli.hpp"

int main(int argc, char** argv) { return spaer::cli::run(argc, argv); }
