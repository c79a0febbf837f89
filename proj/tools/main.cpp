#include "mrcouple/cli.hpp"

int main(int argc, char** argv) { return mrcouple::run_cli(argc, argv); }
