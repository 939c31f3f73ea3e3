#include "ocumesh/cli.hpp"

int main(int argc, char** argv) { return ocumesh::cli::dispatch(argc, argv); }
