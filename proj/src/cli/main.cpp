#include "gns/commands.hpp"

int main(int argc, char** argv) { return gns::cli::run(argc, argv); }
