#include "ugm_cli.hpp"

int main(int argc, char** argv) { return ugm::cli::run(argc, argv); }
