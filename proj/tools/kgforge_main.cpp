#include "kgforge/cli.hpp"

int main(int argc, char** argv) {
    return kgforge::cli::run(argc, argv);
}
