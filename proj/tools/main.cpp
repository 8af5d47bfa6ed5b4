#include "mfb/cli.hpp"

int main(int argc, char** argv) { return mfb::cli::run(argc, argv); }
