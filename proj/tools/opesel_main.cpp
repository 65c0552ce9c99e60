#include "opesel/pipeline.hpp"

int main(int argc, char** argv) { return opesel::run_cli(argc, argv); }
