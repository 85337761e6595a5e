#include "cop3d/cli.hpp"

int main(int argc, char** argv) {
    return cop3d::cli::dispatch(argc, argv);
}
