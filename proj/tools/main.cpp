#include "boklm/cli.hpp"

int main(int argc, char** argv) { return boklm::cli::dispatch(argc, argv); }
