#include "gpna/cli.hpp"
#include "gpna/runtime.hpp"

int main(int argc, char** argv)
{
    gpna::tune_allocator();
    return gpna::cli::run(argc, argv);
}
