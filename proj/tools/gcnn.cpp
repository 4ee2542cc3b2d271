#include "gcnn/cli.hpp"

int main(int argc, char** argv) { return gcnn::run_cli(argc, argv); }
