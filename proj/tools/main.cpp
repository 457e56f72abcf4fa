#include "cli.hpp"

int main(int argc, char** argv) { return misent::cli::run(argc, argv); }
