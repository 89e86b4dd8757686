#include "dutavc/pipeline.hpp"

int main(int argc, char** argv) { return dutavc::cli_main(argc, argv); }
