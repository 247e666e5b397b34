#include "dilate/cli.hpp"

int main(int argc, char** argv) { return dilate::cli::run(argc, argv); }
