#include "tdmoe/bench.hpp"

int main(int argc, char** argv)
{
    return tdmoe::cli_main(argc, argv);
}
